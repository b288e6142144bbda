//! The run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use statecnn::data::{AugmentConfig, DEFAULT_BATCH_SIZE, DEFAULT_SIDE, DEFAULT_SPLIT_RATIO, RESCALE};
use statecnn::layers::DEFAULT_DROPOUT_RATE;
use statecnn::model::{BackboneSpec, ModelSpec, DEFAULT_CLASSES};
use statecnn::optim::OptimizerConfig;
use statecnn::seed;
use statecnn::train::{Stage1Config, Stage2Config, TrainConfig};
use statecnn::{Error, Precision, Result};

pub const SEED_ENV: &str = "STATECNN_SEED";

/// Sub-streams of the master seed.
const SPLIT_STREAM: u64 = 1;
const MODEL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Class-per-directory image tree; split on the fly when no manifest is given.
    pub root: Option<PathBuf>,
    /// Split manifest written by `prepare`; takes precedence over `root`.
    pub manifest: Option<PathBuf>,
    pub image_side: usize,
    pub rescale: f64,
    pub standardize: bool,
    pub split_ratio: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            root: None,
            manifest: None,
            image_side: DEFAULT_SIDE,
            rescale: RESCALE,
            standardize: false,
            split_ratio: DEFAULT_SPLIT_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub classes: usize,
    pub dropout: f64,
    pub conv_blocks: usize,
    pub backbone: BackboneSpec,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            classes: DEFAULT_CLASSES,
            dropout: DEFAULT_DROPOUT_RATE,
            conv_blocks: 2,
            backbone: BackboneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub augment: AugmentConfig,
    pub model: ModelSection,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub batch_size: usize,
    pub keep_all_checkpoints: bool,
    pub precision: Precision,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSection::default(),
            augment: AugmentConfig::default(),
            model: ModelSection::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            keep_all_checkpoints: true,
            precision: Precision::Single,
            seeds: Seeds::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn doc<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize")
}

/// Reference documents for every tagged variant, used to know which keys a
/// tagged object may carry.
fn variants(key: &str) -> Option<(&'static str, Vec<Value>)> {
    match key {
        "backbone" => Some((
            "kind",
            vec![
                doc(&BackboneSpec::default()),
                doc(&BackboneSpec::TinyTrainable { units: 1, channels: 1 }),
            ],
        )),
        "optimizer" => Some((
            "name",
            vec![
                doc(&OptimizerConfig::sgd()),
                doc(&OptimizerConfig::rmsprop()),
                doc(&OptimizerConfig::adam()),
            ],
        )),
        _ => None,
    }
}

fn collect_unknown(user: &Value, schema: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(u), Value::Object(s)) = (user, schema) else {
        return;
    };
    for (k, v) in u {
        let here = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        let Some(sv) = s.get(k) else {
            out.push(here);
            continue;
        };
        let chosen = match variants(k) {
            Some((tag, options)) => {
                let want = v.get(tag);
                options.into_iter().find(|o| want.is_some() && o.get(tag) == want)
            }
            None => Some(sv.clone()),
        };
        if let Some(schema) = chosen {
            collect_unknown(v, &schema, &here, out);
        }
    }
}

impl RunConfig {
    /// Parses a config document, reporting every unknown key at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let schema = doc(&RunConfig::default());
        let mut unknown = Vec::new();
        collect_unknown(&user, &schema, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown configuration key(s): {}",
                unknown.join(", ")
            )));
        }
        let cfg: RunConfig = serde_json::from_value(user).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.dataset.root.as_mut().map(fix);
        cfg.dataset.manifest.as_mut().map(fix);
        fix(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dataset.split_ratio > 0.0 && self.dataset.split_ratio < 1.0) {
            return Err(Error::Config("dataset.split_ratio must be in (0, 1)".into()));
        }
        self.train_config().validate()
    }

    /// Applies `STATECNN_SEED` if it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Some(master) = env_seed()? {
            self.seeds.master = master;
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        split_seed(self.seeds.master)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            classes: self.model.classes,
            image_side: self.dataset.image_side,
            dropout_rate: self.model.dropout,
            conv_blocks: self.model.conv_blocks,
            backbone: self.model.backbone.clone(),
            seed: seed::derive(self.seeds.master, &[MODEL_STREAM]),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            stage1: self.stage1.clone(),
            stage2: self.stage2.clone(),
            batch_size: self.batch_size,
            augment: self.augment.clone(),
            rescale: self.dataset.rescale,
            standardize: self.dataset.standardize,
            seed: seed::derive(self.seeds.master, &[TRAIN_STREAM]),
            keep_all_checkpoints: self.keep_all_checkpoints,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn split_seed(master: u64) -> u64 {
    seed::derive(master, &[SPLIT_STREAM])
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let t = c.train_config();
        assert_eq!(t.batch_size, 32);
        assert_eq!(t.rescale, 1.0 / 255.0);
        assert_eq!(c.dataset.image_side, 363);
        assert_eq!(c.dataset.split_ratio, 0.8);
        assert_eq!(c.model.classes, 7);
        assert_eq!(t.stage2.unfreeze_top_k, 4);
        assert_eq!(
            t.stage2.optimizer,
            OptimizerConfig::Sgd {
                lr: 0.0001,
                decay: 1e-6,
                momentum: 0.9
            }
        );
        assert!(matches!(t.stage1.optimizer, OptimizerConfig::Rmsprop { lr, .. } if lr == 0.001));
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let doc = r#"{
            "bogus": 1,
            "dataset": {"image_side": 64, "sise": 3},
            "model": {"backbone": {"kind": "tiny_trainable", "units": 2, "channels": 4, "depth": 9}},
            "stage2": {"optimizer": {"name": "sgd", "lr": 0.01, "nesterov": true}}
        }"#;
        let Err(Error::Config(msg)) = RunConfig::from_json(doc) else {
            panic!("expected a config error");
        };
        for key in [
            "bogus",
            "dataset.sise",
            "model.backbone.depth",
            "stage2.optimizer.nesterov",
        ] {
            assert!(msg.contains(key), "{msg} misses {key}");
        }
        assert!(!msg.contains("units"));
    }

    #[test]
    fn tagged_variants_parse() {
        let doc = r#"{"model": {"backbone": {"kind": "tiny_trainable", "units": 6, "channels": 8}},
                      "stage1": {"optimizer": {"name": "adam"}}}"#;
        let c = RunConfig::from_json(doc).unwrap();
        assert_eq!(c.model.backbone, BackboneSpec::TinyTrainable { units: 6, channels: 8 });
        assert_eq!(c.stage1.optimizer, OptimizerConfig::adam());
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(
            RunConfig::from_json(r#"{"batch_size": 0}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"batch_size": "x"}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_json("{"), Err(Error::Config(_))));
    }
}
