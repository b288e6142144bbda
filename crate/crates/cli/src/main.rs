//! `statecnn`: prepare splits, train, evaluate, predict and inspect models.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use statecnn::data::{self, partition, scan_directory, Pipeline, Sample, SplitManifest};
use statecnn::model::{CheckpointMeta, Manifest, ModelGraph};
use statecnn::train::{self, SplitData, Stages, PRESETS};
use statecnn::{Error, ErrorClass, Precision, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "statecnn", version, about = "Object-state CNN classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a class-per-directory tree and write a stratified split manifest.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Master seed (overrides STATECNN_SEED).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = data::DEFAULT_SPLIT_RATIO)]
        ratio: f64,
    },
    /// Run training stages from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = StageArg::All)]
        stage: StageArg,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a split manifest (validation part) or a directory tree.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the result as JSON (`-` for stdout).
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = data::DEFAULT_BATCH_SIZE)]
        batch_size: usize,
    },
    /// Classify one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Print the layer table and parameter totals.
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
    },
    /// List experiment presets, or print the config for one.
    Preset { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Input => 2,
        ErrorClass::State => 3,
        ErrorClass::Internal => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    let timed = !matches!(cli.command, Command::Preset { .. });
    let result = match cli.command {
        Command::Prepare { data, out, seed, ratio } => prepare(&data, &out, seed, ratio),
        Command::Train { config, stage, out } => train_cmd(&config, stage, out),
        Command::Evaluate {
            checkpoint,
            data,
            json,
            batch_size,
        } => evaluate_cmd(&checkpoint, &data, json.as_deref(), batch_size),
        Command::Predict { checkpoint, image } => predict_cmd(&checkpoint, &image),
        Command::Inspect { config, preset } => inspect(config.as_deref(), preset.as_deref()),
        Command::Preset { name } => preset_cmd(name.as_deref()),
    };
    match result {
        Ok(()) => {
            if timed {
                println!("# time: {:.3}s", start.elapsed().as_secs_f64());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn prepare(root: &Path, out: &Path, seed: Option<u64>, ratio: f64) -> Result<()> {
    let master = match seed {
        Some(s) => s,
        None => config::env_seed()?.unwrap_or(0),
    };
    let root = fs::canonicalize(root).map_err(|e| Error::Ingestion(format!("{}: {e}", root.display())))?;
    let (dataset, report) = scan_directory(&root)?;
    if !report.skipped.is_empty() {
        eprintln!("warning: skipped {} undecodable file(s)", report.skipped.len());
    }
    let split_seed = config::split_seed(master);
    let (tr, va) = partition(&dataset, ratio, split_seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("split.json");
    SplitManifest::new(&root, split_seed, ratio, &tr, &va).save(&path)?;
    let width = dataset.classes.iter().map(String::len).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>6}  {:>6}", "class", "train", "val");
    for (c, name) in dataset.classes.iter().enumerate() {
        println!(
            "{name:<width$}  {:>6}  {:>6}",
            tr.class_counts()[c],
            va.class_counts()[c]
        );
    }
    println!("{:<width$}  {:>6}  {:>6}", "total", tr.len(), va.len());
    println!("manifest: {}", path.display());
    Ok(())
}

fn load_split(cfg: &RunConfig) -> Result<SplitData> {
    if let Some(m) = &cfg.dataset.manifest {
        let manifest = SplitManifest::load(m)?;
        return Ok(SplitData {
            train: manifest.train_set()?,
            val: manifest.val_set()?,
        });
    }
    let root = cfg
        .dataset
        .root
        .as_ref()
        .ok_or_else(|| Error::Config("config needs dataset.manifest or dataset.root".into()))?;
    let (dataset, _) = scan_directory(root)?;
    let (train, val) = partition(&dataset, cfg.dataset.split_ratio, cfg.split_seed())?;
    Ok(SplitData { train, val })
}

fn train_cmd(path: &Path, stage: StageArg, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_env()?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let split = load_split(&cfg)?;
    let stages = match stage {
        StageArg::One => Stages::One,
        StageArg::Two => Stages::Two,
        StageArg::All => Stages::All,
    };
    let spec = cfg.model_spec();
    let tc = cfg.train_config();
    let outcome = match cfg.precision {
        Precision::Single => train::run_protocol::<f32>(&tc, &spec, &split, &cfg.output_dir, stages)?,
        Precision::Double => train::run_protocol::<f64>(&tc, &spec, &split, &cfg.output_dir, stages)?,
    };
    for m in &outcome.history {
        println!(
            "stage {} epoch {:03} train_loss {:.6} train_acc {:.6} val_loss {:.6} val_acc {:.6}",
            m.stage, m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
    }
    let s = &outcome.selected;
    println!(
        "selected: {} (stage {} epoch {:03} val_loss {:.6} val_acc {:.6})",
        cfg.output_dir.join(&s.checkpoint_path).display(),
        s.stage,
        s.epoch,
        s.val_loss,
        s.val_acc
    );
    println!("metrics: {}", outcome.files.csv.display());
    Ok(())
}

/// Checkpoints carry `f32` payloads, so restored models run in single precision.
fn load_checkpoint(path: &Path) -> Result<(ModelGraph<f32>, Manifest)> {
    train::load_model::<f32>(path)
}

fn pipeline_for(manifest: &Manifest) -> Pipeline {
    let meta: &CheckpointMeta = &manifest.meta;
    Pipeline {
        image_side: manifest.model.image_side,
        rescale: meta.rescale,
        standardize: meta.standardize,
        augment: None,
    }
}

fn class_names(manifest: &Manifest) -> Vec<String> {
    if manifest.meta.class_names.is_empty() {
        (0..manifest.model.classes).map(|i| format!("class_{i}")).collect()
    } else {
        manifest.meta.class_names.clone()
    }
}

fn evaluate_cmd(ckpt: &Path, data_path: &Path, json: Option<&Path>, bs: usize) -> Result<()> {
    let (model, manifest) = load_checkpoint(ckpt)?;
    let dataset = if data_path.is_file() {
        SplitManifest::load(data_path)?.val_set()?
    } else {
        scan_directory(data_path)?.0
    };
    let names = class_names(&manifest);
    if names != dataset.classes {
        return Err(Error::Config(format!(
            "class mismatch: checkpoint has [{}], data has [{}]",
            names.join(", "),
            dataset.classes.join(", ")
        )));
    }
    let eval = train::evaluate(&model, &dataset, &pipeline_for(&manifest), bs)?;
    let n: usize = eval.confusion.iter().flatten().sum();
    println!("loss {:.6}", eval.loss);
    println!("accuracy {:.6} ({n} samples)", eval.accuracy);
    println!("confusion (rows: true class, columns: predicted class)");
    let w = names
        .iter()
        .map(String::len)
        .chain([n.to_string().len()])
        .max()
        .unwrap_or(1);
    print!("{:<w$}", "");
    for name in &names {
        print!("  {name:>w$}");
    }
    println!();
    for (name, row) in names.iter().zip(&eval.confusion) {
        print!("{name:<w$}");
        for v in row {
            print!("  {v:>w$}");
        }
        println!();
    }
    if let Some(path) = json {
        let body = serde_json::to_string_pretty(&eval)?;
        if path == Path::new("-") {
            println!("{body}");
        } else {
            fs::write(path, body + "\n").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

fn predict_cmd(ckpt: &Path, image: &Path) -> Result<()> {
    let (model, manifest) = load_checkpoint(ckpt)?;
    let pipe = pipeline_for(&manifest);
    let pixels = data::decode_image(image)?;
    let sample = Sample::from_pixels(pixels, 0, image.display().to_string())?;
    let side = pipe.image_side;
    let mut x = pipe.prepare(&sample, 0, 0)?.reshape(&[1, side, side, 3])?;
    if pipe.standardize {
        x = data::standardize(&x)?.0;
    }
    let probs = model.predict(&x)?.into_vec();
    let names = class_names(&manifest);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let top = order[0];
    println!("prediction: {} ({:.6})", names[top], probs[top]);
    let w = names.iter().map(String::len).max().unwrap_or(1);
    for i in order {
        println!("  {:<w$}  {:.6}", names[i], probs[i]);
    }
    Ok(())
}

fn inspect(config: Option<&Path>, preset: Option<&str>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(name) = preset {
        let p = train::preset(name).ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        let mut spec = cfg.model_spec();
        let mut tc = cfg.train_config();
        p.apply(&mut spec, &mut tc);
        cfg.model.conv_blocks = spec.conv_blocks;
    }
    let summary = cfg.model_spec().build::<f32>()?.summary()?;
    print!("{summary}");
    Ok(())
}

fn preset_cmd(name: Option<&str>) -> Result<()> {
    let Some(name) = name else {
        for p in &PRESETS {
            println!("{:<24} {}", p.name, p.description);
        }
        return Ok(());
    };
    let p = train::preset(name).ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
    let mut cfg = RunConfig::default();
    let mut spec = cfg.model_spec();
    let mut tc = cfg.train_config();
    p.apply(&mut spec, &mut tc);
    cfg.model.conv_blocks = spec.conv_blocks;
    cfg.stage1 = tc.stage1;
    cfg.stage2 = tc.stage2;
    print!("{}", cfg.to_json()?);
    Ok(())
}
