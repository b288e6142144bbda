//! Two-stage transfer-learning protocol: train the head over a frozen
//! backbone, then fine-tune the top backbone units from the stage-1 pick.

mod export;
mod preset;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{batches, AugmentConfig, Dataset, Pipeline, DEFAULT_BATCH_SIZE, RESCALE};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{self, CheckpointMeta, ModelGraph, TrainablePolicy};
use crate::optim::{categorical_crossentropy, Optimizer, OptimizerConfig};
use crate::seed;
use crate::tensor::{argmax_slice, Element, Tensor};

pub use export::{export_metrics, read_metrics_csv, MetricsFiles, CSV_HEADER};
pub use preset::{preset, Preset, PRESETS};

pub const DEFAULT_STAGE1_EPOCHS: usize = 20;
pub const DEFAULT_STAGE2_EPOCHS: usize = 50;
pub const DEFAULT_UNFREEZE_TOP_K: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            epochs: DEFAULT_STAGE1_EPOCHS,
            optimizer: OptimizerConfig::rmsprop(),
        }
    }
}

/// Which stage-1 checkpoint seeds fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitFrom {
    Best,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub enabled: bool,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub unfreeze_top_k: usize,
    pub init_from: InitFrom,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            enabled: true,
            epochs: DEFAULT_STAGE2_EPOCHS,
            optimizer: OptimizerConfig::sgd(),
            unfreeze_top_k: DEFAULT_UNFREEZE_TOP_K,
            init_from: InitFrom::Best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub rescale: f64,
    pub standardize: bool,
    /// Root of the shuffle and augmentation streams.
    pub seed: u64,
    /// When false, only the selected checkpoint of each stage is kept.
    pub keep_all_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            augment: AugmentConfig::default(),
            rescale: RESCALE,
            standardize: false,
            seed: 0,
            keep_all_checkpoints: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.rescale > 0.0 && self.rescale.is_finite()) {
            return Err(Error::Config("rescale must be a positive factor".into()));
        }
        if self.stage1.epochs == 0 {
            return Err(Error::Config("stage1.epochs must be at least 1".into()));
        }
        if self.stage2.enabled && self.stage2.epochs == 0 {
            return Err(Error::Config("stage2.epochs must be at least 1".into()));
        }
        self.stage1.optimizer.validate()?;
        self.stage2.optimizer.validate()?;
        self.augment.validate()
    }

    fn epochs(&self, stage: u8) -> usize {
        if stage == 1 {
            self.stage1.epochs
        } else {
            self.stage2.epochs
        }
    }

    fn optimizer(&self, stage: u8) -> OptimizerConfig {
        if stage == 1 {
            self.stage1.optimizer
        } else {
            self.stage2.optimizer
        }
    }

    fn training_pipeline(&self, image_side: usize, stage: u8) -> Pipeline {
        let augment = AugmentConfig {
            seed: seed::derive(self.seed, &[u64::from(stage), 2, self.augment.seed]),
            ..self.augment.clone()
        };
        Pipeline {
            image_side,
            rescale: self.rescale,
            standardize: self.standardize,
            augment: Some(augment),
        }
    }

    pub fn eval_pipeline(&self, image_side: usize) -> Pipeline {
        Pipeline {
            image_side,
            rescale: self.rescale,
            standardize: self.standardize,
            augment: None,
        }
    }
}

/// One row of the training log. `checkpoint_path` is relative to the run's
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub checkpoint_path: String,
}

/// The record ordered first by (val_loss asc, val_acc desc, epoch asc).
pub fn select_best(history: &[EpochMetrics]) -> Result<EpochMetrics> {
    history
        .iter()
        .min_by(|a, b| {
            a.val_loss
                .total_cmp(&b.val_loss)
                .then(b.val_acc.total_cmp(&a.val_acc))
                .then(a.epoch.cmp(&b.epoch))
                .then(a.stage.cmp(&b.stage))
        })
        .cloned()
        .ok_or_else(|| Error::Input("cannot select from an empty history".into()))
}

pub fn checkpoint_name(stage: u8, epoch: usize) -> String {
    format!("stage{stage}_epoch{epoch:03}.ckpt")
}

/// Loss, accuracy and confusion counts (`confusion[true][pred]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct Tally {
    loss_sum: f64,
    correct: usize,
    n: usize,
    confusion: Vec<Vec<usize>>,
}

impl Tally {
    fn new(k: usize) -> Self {
        Tally {
            loss_sum: 0.0,
            correct: 0,
            n: 0,
            confusion: vec![vec![0; k]; k],
        }
    }

    fn add<T: Element>(&mut self, probs: &Tensor<T>, labels: &[usize], mean_loss: f64) {
        for (r, &y) in labels.iter().enumerate() {
            let pred = argmax_slice(probs.row(r));
            self.confusion[y][pred] += 1;
            self.correct += usize::from(pred == y);
        }
        self.n += labels.len();
        self.loss_sum += mean_loss * labels.len() as f64;
    }

    fn loss(&self) -> f64 {
        self.loss_sum / self.n as f64
    }

    fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

impl Evaluation {
    /// Scores a `(N, K)` probability matrix against integer labels.
    pub fn from_probs<T: Element>(probs: &Tensor<T>, labels: &[usize], classes: Vec<String>) -> Result<Self> {
        let k = classes.len();
        if probs.rank() != 2 || probs.dims() != [labels.len(), k] {
            return Err(Error::Shape(format!(
                "expected ({}, {k}) probabilities, got {:?}",
                labels.len(),
                probs.dims()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Input("cannot evaluate an empty dataset".into()));
        }
        let targets = one_hot_matrix::<T>(labels, k)?;
        let (loss, _) = categorical_crossentropy(probs, &targets)?;
        let mut tally = Tally::new(k);
        tally.add(probs, labels, loss.as_f64());
        Ok(tally.into_eval(classes))
    }
}

impl Tally {
    fn into_eval(self, classes: Vec<String>) -> Evaluation {
        Evaluation {
            loss: self.loss(),
            accuracy: self.accuracy(),
            classes,
            confusion: self.confusion,
        }
    }
}

fn one_hot_matrix<T: Element>(labels: &[usize], k: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
    }
    let mut v = vec![T::zero(); labels.len() * k];
    for (r, &y) in labels.iter().enumerate() {
        v[r * k + y] = T::one();
    }
    Tensor::from_vec(&[labels.len(), k], v)
}

fn check_classes<T: Element>(model: &ModelGraph<T>, data: &Dataset) -> Result<()> {
    if model.classes() != data.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes but the data has {} ({})",
            model.classes(),
            data.num_classes(),
            data.classes.join(", ")
        )));
    }
    Ok(())
}

/// Inference-mode evaluation; the model is not mutated.
pub fn evaluate<T: Element>(
    model: &ModelGraph<T>,
    data: &Dataset,
    pipeline: &Pipeline,
    batch_size: usize,
) -> Result<Evaluation> {
    check_classes(model, data)?;
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate an empty dataset".into()));
    }
    let k = data.num_classes();
    let mut tally = Tally::new(k);
    for batch in batches(data, batch_size, None, 0, pipeline)? {
        let batch = batch?;
        let probs = model.predict(&batch.images.cast::<T>())?;
        let (loss, _) = categorical_crossentropy(&probs, &batch.labels_onehot.cast::<T>())?;
        tally.add(&probs, &batch.labels(), loss.as_f64());
    }
    Ok(tally.into_eval(data.classes.clone()))
}

/// Training and validation data for one run.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset,
    pub val: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub history: Vec<EpochMetrics>,
    pub best: EpochMetrics,
}

impl StageOutcome {
    pub fn last(&self) -> &EpochMetrics {
        self.history.last().expect("a stage runs at least one epoch")
    }
}

fn train_epoch<T: Element>(
    model: &mut ModelGraph<T>,
    opt: &mut Optimizer<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    pipeline: &Pipeline,
    shuffle_seed: u64,
    epoch: usize,
) -> Result<(f64, f64)> {
    model.set_mode(Mode::Training);
    let mut tally = Tally::new(data.num_classes());
    for batch in batches(data, cfg.batch_size, Some(shuffle_seed), epoch as u64, pipeline)? {
        let batch = batch?;
        let targets = batch.labels_onehot.cast::<T>();
        let probs = model.forward(&batch.images.cast::<T>())?;
        let (loss, grad) = categorical_crossentropy(&probs, &targets)?;
        if !loss.as_f64().is_finite() {
            return Err(Error::State(format!("loss became {loss} at epoch {epoch}")));
        }
        model.backward(&grad)?;
        opt.step(&mut model.params_mut())?;
        tally.add(&probs, &batch.labels(), loss.as_f64());
    }
    model.set_mode(Mode::Inference);
    Ok((tally.loss(), tally.accuracy()))
}

fn run_stage<T: Element>(
    stage: u8,
    cfg: &TrainConfig,
    model: &mut ModelGraph<T>,
    data: &SplitData,
    out_dir: &Path,
    keep_last: bool,
) -> Result<StageOutcome> {
    cfg.validate()?;
    check_classes(model, &data.train)?;
    check_classes(model, &data.val)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let side = model.spec().image_side;
    let pipeline = cfg.training_pipeline(side, stage);
    let eval_pipeline = cfg.eval_pipeline(side);
    let shuffle_seed = seed::derive(cfg.seed, &[u64::from(stage), 1]);
    let mut opt = Optimizer::new(cfg.optimizer(stage))?;
    model.set_dropout_step(u64::from(stage) << 32);

    let mut history = Vec::with_capacity(cfg.epochs(stage));
    for epoch in 1..=cfg.epochs(stage) {
        let (train_loss, train_acc) = train_epoch(model, &mut opt, &data.train, cfg, &pipeline, shuffle_seed, epoch)?;
        let val = evaluate(model, &data.val, &eval_pipeline, cfg.batch_size)?;
        let name = checkpoint_name(stage, epoch);
        let metrics = EpochMetrics {
            stage,
            epoch,
            train_loss,
            train_acc,
            val_loss: val.loss,
            val_acc: val.accuracy,
            checkpoint_path: name.clone(),
        };
        log::info!(
            "stage {stage} epoch {epoch}: loss {train_loss:.4} acc {train_acc:.4} val_loss {:.4} val_acc {:.4}",
            val.loss,
            val.accuracy
        );
        let meta = CheckpointMeta {
            stage: Some(stage),
            epoch: Some(epoch),
            class_names: data.train.classes.clone(),
            metrics: Some(metrics.clone()),
            rescale: cfg.rescale,
            standardize: cfg.standardize,
        };
        model::save(model, &meta, &out_dir.join(&name))?;
        history.push(metrics);
    }
    let best = select_best(&history)?;
    if !cfg.keep_all_checkpoints {
        let last = history.last().map(|m| m.checkpoint_path.clone());
        for m in &history {
            let keep =
                m.checkpoint_path == best.checkpoint_path || (keep_last && Some(&m.checkpoint_path) == last.as_ref());
            if !keep {
                let p = out_dir.join(&m.checkpoint_path);
                fs::remove_file(&p).map_err(|e| Error::io(p, e))?;
            }
        }
    }
    Ok(StageOutcome { history, best })
}

/// Stage 1: freeze the whole backbone and train the head.
pub fn run_stage1<T: Element>(
    cfg: &TrainConfig,
    model: &mut ModelGraph<T>,
    data: &SplitData,
    out_dir: &Path,
) -> Result<StageOutcome> {
    model.set_trainable(&TrainablePolicy::FreezeBackboneAll)?;
    let keep_last = cfg.stage2.enabled && cfg.stage2.init_from == InitFrom::Last;
    run_stage(1, cfg, model, data, out_dir, keep_last)
}

/// Rebuilds a model from a checkpoint file and restores its parameters.
pub fn load_model<T: Element>(path: &Path) -> Result<(ModelGraph<T>, model::Manifest)> {
    if !path.is_file() {
        return Err(Error::State(format!("checkpoint {} does not exist", path.display())));
    }
    let manifest = model::read_manifest(path)?;
    let mut graph = manifest.model.build::<T>()?;
    model::load(path, &mut graph)?;
    Ok((graph, manifest))
}

/// Stage 2: load the stage-1 checkpoint, unfreeze the top backbone units
/// and fine-tune everything trainable.
pub fn run_stage2<T: Element>(
    cfg: &TrainConfig,
    stage1_checkpoint: &Path,
    data: &SplitData,
    out_dir: &Path,
) -> Result<(ModelGraph<T>, StageOutcome)> {
    let (mut model, _) = load_model::<T>(stage1_checkpoint)?;
    model.set_trainable(&TrainablePolicy::UnfreezeBackboneTop(cfg.stage2.unfreeze_top_k))?;
    let outcome = run_stage(2, cfg, &mut model, data, out_dir, false)?;
    Ok((model, outcome))
}

/// Recovers the stage-1 history from `out_dir` and returns it with the
/// checkpoint that should seed stage 2. The pick uses the exact metrics
/// stored in the surviving checkpoints; rows whose checkpoints were pruned
/// come from `metrics.csv` when it covers them.
pub fn find_stage1_checkpoint(out_dir: &Path, init_from: InitFrom) -> Result<(Vec<EpochMetrics>, PathBuf)> {
    let entries = match fs::read_dir(out_dir) {
        Ok(e) => e,
        Err(_) => {
            return Err(Error::State(format!(
                "no stage-1 checkpoints: {} is not readable",
                out_dir.display()
            )))
        }
    };
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("stage1_epoch") && n.ends_with(".ckpt"))
        .collect();
    names.sort();
    let mut saved = Vec::new();
    for n in &names {
        let m = model::read_manifest(&out_dir.join(n))?;
        let metrics = m
            .meta
            .metrics
            .ok_or_else(|| Error::State(format!("checkpoint {n} carries no metrics")))?;
        saved.push(metrics);
    }
    if saved.is_empty() {
        return Err(Error::State(format!(
            "no stage-1 checkpoint found in {}",
            out_dir.display()
        )));
    }
    saved.sort_by_key(|m| m.epoch);
    let pick = match init_from {
        InitFrom::Best => select_best(&saved)?,
        InitFrom::Last => saved.last().cloned().expect("nonempty"),
    };
    let last_epoch = saved.last().map_or(0, |m| m.epoch);
    let logged: Vec<EpochMetrics> = read_metrics_csv(&out_dir.join("metrics.csv"))
        .map(|rows| rows.into_iter().filter(|m| m.stage == 1).collect())
        .unwrap_or_default();
    let covers = logged.len() == last_epoch && logged.iter().enumerate().all(|(i, m)| m.epoch == i + 1);
    let history = if covers {
        logged
            .into_iter()
            .map(|row| match saved.iter().find(|m| m.epoch == row.epoch) {
                Some(exact) => exact.clone(),
                None => EpochMetrics {
                    checkpoint_path: checkpoint_name(1, row.epoch),
                    ..row
                },
            })
            .collect()
    } else {
        saved
    };
    Ok((history, out_dir.join(pick.checkpoint_path)))
}

/// Which stages a protocol run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stages {
    One,
    Two,
    All,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: Vec<EpochMetrics>,
    pub stage1: Option<StageOutcome>,
    pub stage2: Option<StageOutcome>,
    /// The final selected record: stage 2's best if it ran, else stage 1's.
    pub selected: EpochMetrics,
    pub files: MetricsFiles,
}

/// Runs the requested stages into `out_dir` and exports the metrics log.
pub fn run_protocol<T: Element>(
    cfg: &TrainConfig,
    spec: &model::ModelSpec,
    data: &SplitData,
    out_dir: &Path,
    stages: Stages,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut history = Vec::new();
    let mut stage1 = None;
    if matches!(stages, Stages::One | Stages::All) {
        let mut model = spec.build::<T>()?;
        let out = run_stage1(cfg, &mut model, data, out_dir)?;
        history.extend(out.history.iter().cloned());
        stage1 = Some(out);
    }
    let mut stage2 = None;
    let run_two = match stages {
        Stages::Two => true,
        Stages::All => cfg.stage2.enabled,
        Stages::One => false,
    };
    if run_two {
        let (prior, init) = find_stage1_checkpoint(out_dir, cfg.stage2.init_from)?;
        if stage1.is_none() {
            history.extend(prior);
        }
        let (_, out) = run_stage2::<T>(cfg, &init, data, out_dir)?;
        history.extend(out.history.iter().cloned());
        stage2 = Some(out);
    }
    let selected = match (&stage2, &stage1) {
        (Some(s), _) | (None, Some(s)) => s.best.clone(),
        (None, None) => return Err(Error::Config("no stage selected to run".into())),
    };
    let files = export_metrics(&history, out_dir)?;
    Ok(RunOutcome {
        history,
        stage1,
        stage2,
        selected,
        files,
    })
}
