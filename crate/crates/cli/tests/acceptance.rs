//! The eight acceptance criteria. Each prints one PASS/FAIL line; the test
//! fails if any criterion does.

#[path = "../../core/tests/gradients.rs"]
mod gradients;
#[path = "../../core/tests/oracles.rs"]
mod oracles;

use std::fs;
use std::io::{self, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use statecnn::data::{batches, synthetic, AugmentConfig, Pipeline, SplitManifest};
use statecnn::model::{BackboneSpec, ModelSpec};
use statecnn::train::{self, read_metrics_csv, select_best, EpochMetrics, SplitData, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn statecnn(args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_statecnn"))
        .args(args)
        .env_remove("STATECNN_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!(
            "statecnn {args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Fills in a preset document for a tiny-backbone run on a prepared split.
fn run_config(preset: &str, manifest: &Path, units: usize, out: &Path) -> Result<Value, String> {
    let mut cfg: Value = serde_json::from_str(&statecnn(&["preset", preset])?).map_err(|e| e.to_string())?;
    cfg["dataset"]["manifest"] = json!(manifest);
    cfg["dataset"]["image_side"] = json!(64);
    cfg["model"]["backbone"] = json!({"kind": "tiny_trainable", "units": units, "channels": 8});
    cfg["batch_size"] = json!(8);
    cfg["seeds"]["master"] = json!(2024);
    cfg["output_dir"] = json!(out);
    Ok(cfg)
}

fn write_json(path: &Path, v: &Value) -> PathBuf {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

const HEAD_PARAMS: [u64; 16] = [589_856, 128, 0, 0, 18_496, 256, 0, 0, 0, 8_224, 128, 0, 0, 231, 28, 0];

fn head_table() -> Outcome {
    let t = Instant::now();
    let out = statecnn(&["inspect"])?;
    let elapsed = t.elapsed();
    let rows: Vec<&str> = out.lines().filter(|l| l.contains("[0][0]")).collect();
    ensure(rows.len() == 16, format!("expected 16 head rows, got {}", rows.len()))?;
    for (row, want) in rows.iter().zip(HEAD_PARAMS) {
        let cols: Vec<&str> = row.split_whitespace().collect();
        let got: u64 = cols[cols.len() - 2].parse().map_err(|_| format!("bad row {row:?}"))?;
        ensure(got == want, format!("row {row:?}: {got} != {want}"))?;
    }
    let want_shapes = [
        "(None, 10, 10, 32)",
        "(None, 5, 5, 32)",
        "(None, 5, 5, 64)",
        "(None, 2, 2, 64)",
        "(None, 256)",
        "(None, 32)",
        "(None, 7)",
    ];
    for shape in want_shapes {
        ensure(out.contains(shape), format!("missing output shape {shape}"))?;
    }
    for footer in [
        "Total params: 22,420,131",
        "Trainable params: 617,077",
        "Non-trainable params: 21,803,054",
    ] {
        ensure(out.lines().any(|l| l == footer), format!("missing footer {footer:?}"))?;
    }
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("16 rows and footers exact, {:.3}s", elapsed.as_secs_f64()))
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    gradients::conv2d_gradients();
    gradients::dense_gradients();
    gradients::batchnorm_gradients_in_both_modes();
    gradients::relu_gradients_away_from_kink();
    gradients::softmax_gradients();
    gradients::maxpool_gradients_with_distinct_values();
    gradients::flatten_gradients();
    gradients::dropout_gradients_with_fixed_mask();
    gradients::crossentropy_gradient();
    gradients::softmax_then_crossentropy_gives_p_minus_y();
    gradients::full_model_parameter_gradients();
    let elapsed = t.elapsed();
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "9 layer kinds + loss, 25 seeds each, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn oracle_suite() -> Outcome {
    let t = Instant::now();
    oracles::conv2d_matches_naive_loops();
    oracles::maxpool_is_exact();
    oracles::matmul_and_transpose_match_naive();
    oracles::dense_matches_naive();
    oracles::reductions_match_naive();
    oracles::argmax_is_first_maximum();
    Ok(format!(
        "100 instances per kernel in f32 and f64, {:.2}s",
        t.elapsed().as_secs_f64()
    ))
}

fn overfit() -> Outcome {
    let t = Instant::now();
    let data = synthetic::dataset(7, 8, 64, 1).map_err(|e| e.to_string())?;
    let spec = ModelSpec {
        image_side: 64,
        backbone: BackboneSpec::TinyTrainable { units: 4, channels: 8 },
        seed: 1,
        ..ModelSpec::default()
    };
    let mut model = spec.build::<f32>().map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 8;
    cfg.stage1.epochs = 200;
    cfg.stage2.enabled = false;
    cfg.augment = AugmentConfig::identity();
    cfg.keep_all_checkpoints = false;
    let split = SplitData {
        train: data.clone(),
        val: data.clone(),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = train::run_stage1(&cfg, &mut model, &split, dir.path()).map_err(|e| e.to_string())?;
    let eval = train::evaluate(&model, &data, &Pipeline::eval(64, false), 8).map_err(|e| e.to_string())?;
    let first = out.history.iter().find(|m| m.val_acc >= 0.99).map(|m| m.epoch);
    let elapsed = t.elapsed();
    ensure(
        eval.accuracy >= 0.99,
        format!("training accuracy {:.4} after 200 epochs", eval.accuracy),
    )?;
    ensure(elapsed < Duration::from_secs(300), format!("took {elapsed:?}"))?;
    Ok(format!(
        "training accuracy {:.4} (first >= 0.99 at epoch {}), {:.1}s",
        eval.accuracy,
        first.map_or("-".into(), |e| e.to_string()),
        elapsed.as_secs_f64()
    ))
}

fn freeze_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    synthetic::write_tree(&data, 7, 8, 64, 2).map_err(|e| e.to_string())?;
    let prep = dir.path().join("prep");
    statecnn(&["prepare", "--data", s(&data), "--out", s(&prep), "--seed", "2024"])?;
    let run = dir.path().join("run");
    let mut cfg = run_config("two-block-finetune-best", &prep.join("split.json"), 6, &run)?;
    cfg["stage2"]["unfreeze_top_k"] = json!(4);
    let cfg_path = write_json(&dir.path().join("run.json"), &cfg);
    statecnn(&["train", "--config", s(&cfg_path)])?;

    let rows = read_metrics_csv(&run.join("metrics.csv")).map_err(|e| e.to_string())?;
    let (n1, n2) = (
        rows.iter().filter(|r| r.stage == 1).count(),
        rows.iter().filter(|r| r.stage == 2).count(),
    );
    ensure((n1, n2) == (100, 31), format!("csv has {n1} + {n2} rows"))?;

    let last = run.join(train::checkpoint_name(2, 31));
    let (fin, manifest) = train::load_model::<f32>(&last).map_err(|e| e.to_string())?;
    let init = manifest.model.build::<f32>().map_err(|e| e.to_string())?;
    let bits = |m: &statecnn::model::ModelGraph<f32>| -> Vec<Vec<u32>> {
        m.backbone()
            .params()
            .iter()
            .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
            .collect()
    };
    let (a, b) = (bits(&init), bits(&fin));
    ensure(a.len() == 12, format!("expected 12 backbone slots, got {}", a.len()))?;
    for unit in 0..6 {
        let same = a[2 * unit..2 * unit + 2] == b[2 * unit..2 * unit + 2];
        ensure(same == (unit < 2), format!("unit {unit}: identical={same}"))?;
    }
    Ok("bottom 2 units byte-identical, top 4 changed, 100 + 31 CSV rows".into())
}

fn record(epoch: usize, val_loss: f64, val_acc: f64) -> EpochMetrics {
    EpochMetrics {
        stage: 1,
        epoch,
        train_loss: 0.0,
        train_acc: 0.0,
        val_loss,
        val_acc,
        checkpoint_path: train::checkpoint_name(1, epoch),
    }
}

fn checkpoint_policy() -> Outcome {
    let plateau: Vec<_> = (1..=100)
        .map(|e| {
            let loss = 1.5 - 0.03 * e.min(31) as f64;
            record(e, loss, 0.76)
        })
        .collect();
    let pick = select_best(&plateau).map_err(|e| e.to_string())?.epoch;
    ensure(pick == 31, format!("plateau history picked epoch {pick}"))?;

    let mut r = ChaCha8Rng::seed_from_u64(31);
    for case in 0..100 {
        let n = r.gen_range(2..80);
        let levels = r.gen_range(1..4);
        let mut h: Vec<_> = (1..=n)
            .map(|e| record(e, 0.5 + r.gen_range(0..levels) as f64 * 0.1, 0.5))
            .collect();
        for i in (1..h.len()).rev() {
            h.swap(i, r.gen_range(0..=i));
        }
        let min = h.iter().map(|m| m.val_loss).fold(f64::INFINITY, f64::min);
        let want = h.iter().filter(|m| m.val_loss == min).map(|m| m.epoch).min().unwrap();
        let got = select_best(&h).map_err(|e| e.to_string())?.epoch;
        ensure(got == want, format!("tie case {case}: picked {got}, oracle {want}"))?;
    }
    Ok("plateau picks epoch 31; 100 tie cases pick the earliest epoch".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    synthetic::write_tree(&data, 7, 6, 64, 3).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for k in ["a", "b"] {
        let base = dir.path().join(k);
        let prep = base.join("prep");
        statecnn(&["prepare", "--data", s(&data), "--out", s(&prep), "--seed", "7"])?;
        let run = base.join("run");
        let mut cfg = run_config("two-block-finetune-best", &prep.join("split.json"), 4, &run)?;
        cfg["stage1"]["epochs"] = json!(3);
        cfg["stage2"]["epochs"] = json!(2);
        cfg["stage2"]["unfreeze_top_k"] = json!(2);
        let cfg_path = write_json(&base.join("run.json"), &cfg);
        statecnn(&["train", "--config", s(&cfg_path), "--stage", "all"])?;
        let best = run.join(train::checkpoint_name(2, 2));
        let eval = statecnn(&[
            "evaluate",
            "--checkpoint",
            s(&best),
            "--data",
            s(&prep.join("split.json")),
            "--json",
            "-",
        ])?;
        let eval: String = eval
            .lines()
            .filter(|l| !l.starts_with("# time"))
            .collect::<Vec<_>>()
            .join("\n");
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&run)
            .map_err(|e| e.to_string())?
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files.push((
            "split.json".into(),
            fs::read(prep.join("split.json")).map_err(|e| e.to_string())?,
        ));
        reports.push((files, eval));
    }
    let (a, b) = (&reports[0], &reports[1]);
    ensure(a.0.len() == b.0.len(), "different file sets")?;
    for ((na, ba), (nb, bb)) in a.0.iter().zip(&b.0) {
        ensure(na == nb && ba == bb, format!("{na} differs between runs"))?;
    }
    ensure(a.1 == b.1, "evaluation output differs")?;
    let ckpts = a.0.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    Ok(format!(
        "{ckpts} checkpoints, metrics.csv, SVGs, split manifest and evaluation identical"
    ))
}

fn data_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    synthetic::write_tree(&data, 7, 100, 40, 4).map_err(|e| e.to_string())?;
    let prep = dir.path().join("prep");
    statecnn(&["prepare", "--data", s(&data), "--out", s(&prep)])?;
    let m = SplitManifest::load(&prep.join("split.json")).map_err(|e| e.to_string())?;
    let (tr, va) = (
        m.train_set().map_err(|e| e.to_string())?,
        m.val_set().map_err(|e| e.to_string())?,
    );
    ensure(
        tr.class_counts() == vec![80; 7],
        format!("train counts {:?}", tr.class_counts()),
    )?;
    ensure(
        va.class_counts() == vec![20; 7],
        format!("val counts {:?}", va.class_counts()),
    )?;

    let pipeline = Pipeline {
        augment: Some(AugmentConfig {
            seed: 5,
            ..AugmentConfig::default()
        }),
        ..Pipeline::default()
    };
    let mut n_batches = 0;
    let mut seen = 0;
    for b in batches(&tr, 32, Some(9), 1, &pipeline).map_err(|e| e.to_string())? {
        let b = b.map_err(|e| e.to_string())?;
        let d = b.images.dims();
        ensure(
            d.len() == 4 && d[0] <= 32 && d[0] >= 1 && d[1..] == [363, 363, 3],
            format!("batch dims {d:?}"),
        )?;
        ensure(
            b.images.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "pixel outside [0, 1]",
        )?;
        ensure(
            b.labels_onehot.dims() == [d[0], 7],
            format!("label dims {:?}", b.labels_onehot.dims()),
        )?;
        for (row, &idx) in b.indices.iter().enumerate() {
            let r = b.labels_onehot.row(row);
            let ones = r.iter().filter(|&&v| v == 1.0).count();
            let zeros = r.iter().filter(|&&v| v == 0.0).count();
            ensure(ones == 1 && zeros == 6, "label row is not one-hot")?;
            ensure(
                r[tr.samples[idx].label] == 1.0,
                "one-hot disagrees with the sample label",
            )?;
        }
        n_batches += 1;
        seen += d[0];
    }
    ensure(seen == 560, format!("batches covered {seen} samples"))?;
    Ok(format!(
        "80/20 per class; {n_batches} batches of [<=32, 363, 363, 3] in [0, 1] with valid one-hot labels"
    ))
}

/// Written straight to the process stdout so the lines show up even when
/// the test harness captures output.
fn report(line: &str) {
    let mut out = io::stdout().lock();
    writeln!(out, "{line}").and_then(|_| out.flush()).expect("stdout is writable");
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("head table reproduction", head_table),
        ("gradient suite", gradient_suite),
        ("oracle suite", oracle_suite),
        ("overfit property", overfit),
        ("freeze/fine-tune protocol", freeze_protocol),
        ("checkpoint policy", checkpoint_policy),
        ("determinism", determinism),
        ("data pipeline", data_pipeline),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = match panic::catch_unwind(AssertUnwindSafe(run)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match result {
            Ok(detail) => report(&format!("criterion {} [{name}]: PASS ({detail})", i + 1)),
            Err(why) => {
                report(&format!("criterion {} [{name}]: FAIL ({why})", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
