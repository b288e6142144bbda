use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, Sample};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub label: usize,
}

/// The train/validation membership written by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub format_version: u32,
    pub root: PathBuf,
    pub seed: u64,
    pub ratio: f64,
    pub classes: Vec<String>,
    pub train: Vec<SplitEntry>,
    pub val: Vec<SplitEntry>,
}

fn entries(d: &Dataset) -> Vec<SplitEntry> {
    d.samples
        .iter()
        .map(|s| SplitEntry {
            path: s.source_path.clone(),
            label: s.label,
        })
        .collect()
}

impl SplitManifest {
    pub fn new(root: &Path, seed: u64, ratio: f64, train: &Dataset, val: &Dataset) -> Self {
        SplitManifest {
            format_version: MANIFEST_VERSION,
            root: root.to_path_buf(),
            seed,
            ratio,
            classes: train.classes.clone(),
            train: entries(train),
            val: entries(val),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SplitManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("bad split manifest {}: {e}", path.display())))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Input(format!(
                "unsupported split manifest version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    fn dataset(&self, list: &[SplitEntry]) -> Result<Dataset> {
        let samples = list
            .iter()
            .map(|e| {
                let full = e.path.split('/').fold(self.root.clone(), |p, c| p.join(c));
                Sample::from_file(full, e.label, e.path.clone())
            })
            .collect();
        Dataset::new(self.classes.clone(), samples)
    }

    pub fn train_set(&self) -> Result<Dataset> {
        self.dataset(&self.train)
    }

    pub fn val_set(&self) -> Result<Dataset> {
        self.dataset(&self.val)
    }
}
