use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::EpochMetrics;

pub const CSV_HEADER: &str = "epoch,stage,train_loss,train_acc,val_loss,val_acc";
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsFiles {
    pub csv: PathBuf,
    pub accuracy_svg: PathBuf,
    pub loss_svg: PathBuf,
}

fn csv(history: &[EpochMetrics]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for m in history {
        writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            m.epoch, m.stage, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        )
        .unwrap();
    }
    s
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn series(history: &[EpochMetrics], train: fn(&EpochMetrics) -> f64, val: fn(&EpochMetrics) -> f64) -> Vec<Series> {
    let mut stages: Vec<u8> = history.iter().map(|m| m.stage).collect();
    stages.dedup();
    let mut out = Vec::new();
    for stage in stages {
        for (kind, f) in [("train", train), ("val", val)] {
            let points = history
                .iter()
                .enumerate()
                .filter(|(_, m)| m.stage == stage)
                .map(|(i, m)| ((i + 1) as f64, f(m)))
                .collect();
            out.push(Series {
                label: format!("stage{stage}-{kind}"),
                points,
            });
        }
    }
    out
}

fn svg(title: &str, all: &[Series]) -> String {
    let xs = all.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = || {
        all.iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .filter(|v| v.is_finite())
    };
    let x_max = xs.fold(1.0f64, f64::max);
    let (mut y_min, mut y_max) = (
        ys().fold(f64::INFINITY, f64::min),
        ys().fold(f64::NEG_INFINITY, f64::max),
    );
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
    }
    let px = |x: f64| MARGIN + (x - 1.0) / (x_max - 1.0).max(1.0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"  <title>{title}</title>"#).unwrap();
    writeln!(s, r##"  <rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    writeln!(s, r#"  <line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#).unwrap();
    writeln!(s, r#"  <line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#).unwrap();
    writeln!(
        s,
        r#"  <text x="{x0}" y="{}" font-size="11">{y_max:.3}</text>"#,
        y1 - 6.0
    )
    .unwrap();
    writeln!(
        s,
        r#"  <text x="{x0}" y="{}" font-size="11">{y_min:.3}</text>"#,
        y0 + 14.0
    )
    .unwrap();
    writeln!(
        s,
        r#"  <text x="{}" y="{}" font-size="11">epoch {x_max}</text>"#,
        x1 - 60.0,
        y0 + 14.0
    )
    .unwrap();
    for (i, ser) in all.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let color = COLORS[i % COLORS.len()];
        let dash = if ser.label.ends_with("val") {
            r#" stroke-dasharray="6,3""#
        } else {
            ""
        };
        writeln!(
            s,
            r#"  <polyline data-series="{}" fill="none" stroke="{color}"{dash} points="{}"/>"#,
            ser.label,
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            r#"  <text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            x1 - 90.0,
            y1 + 14.0 * (i as f64 + 1.0),
            ser.label
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `metrics.csv`, `accuracy.svg` and `loss.svg` into `out_dir`.
pub fn export_metrics(history: &[EpochMetrics], out_dir: &Path) -> Result<MetricsFiles> {
    if history.is_empty() {
        return Err(Error::Input("no metrics to export".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = MetricsFiles {
        csv: out_dir.join("metrics.csv"),
        accuracy_svg: out_dir.join("accuracy.svg"),
        loss_svg: out_dir.join("loss.svg"),
    };
    let acc = series(history, |m| m.train_acc, |m| m.val_acc);
    let loss = series(history, |m| m.train_loss, |m| m.val_loss);
    for (path, body) in [
        (&files.csv, csv(history)),
        (&files.accuracy_svg, svg("accuracy", &acc)),
        (&files.loss_svg, svg("loss", &loss)),
    ] {
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}

/// Parses a metrics CSV. Checkpoint paths are not stored and come back empty.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Input(format!(
            "{} does not start with the metrics header",
            path.display()
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Input(format!("{}:{}: malformed row", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
            Ok(EpochMetrics {
                epoch: f[0].parse().map_err(|_| bad())?,
                stage: f[1].parse().map_err(|_| bad())?,
                train_loss: num(2)?,
                train_acc: num(3)?,
                val_loss: num(4)?,
                val_acc: num(5)?,
                checkpoint_path: String::new(),
            })
        })
        .collect()
}
