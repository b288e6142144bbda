//! Dataset ingestion, stratified partitioning, preprocessing and batching.

mod augment;
mod image_ops;
mod manifest;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub use augment::{apply as apply_transform, augment, AugmentConfig, FillMode, Transform};
pub use image_ops::{rescale, rescale_by, resize, standardize, DEFAULT_SIDE, RESCALE};
pub use manifest::{SplitEntry, SplitManifest, MANIFEST_VERSION};

pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
pub const DEFAULT_BATCH_SIZE: usize = 32;
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Where a sample's pixels come from. File-backed samples decode on demand.
#[derive(Debug, Clone)]
pub enum ImageSource {
    Path(PathBuf),
    Memory(Arc<Tensor<f32>>),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub source: ImageSource,
    pub label: usize,
    pub source_path: String,
}

impl Sample {
    pub fn from_file(path: PathBuf, label: usize, source_path: String) -> Self {
        Sample {
            source: ImageSource::Path(path),
            label,
            source_path,
        }
    }

    /// An in-memory `(H, W, 3)` image with values in `[0, 255]`.
    pub fn from_pixels(image: Tensor<f32>, label: usize, source_path: impl Into<String>) -> Result<Self> {
        match image.dims() {
            [_, _, 3] => Ok(Sample {
                source: ImageSource::Memory(Arc::new(image)),
                label,
                source_path: source_path.into(),
            }),
            d => Err(Error::Shape(format!("sample images must be (H, W, 3), got {d:?}"))),
        }
    }

    pub fn image(&self) -> Result<Tensor<f32>> {
        match &self.source {
            ImageSource::Path(p) => decode_image(p),
            ImageSource::Memory(t) => Ok((**t).clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(classes: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = classes.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::Ingestion(format!("duplicate class name {dup:?}")));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= classes.len()) {
            return Err(Error::Ingestion(format!(
                "sample {} has label {} but there are {} classes",
                s.source_path,
                s.label,
                classes.len()
            )));
        }
        Ok(Dataset { classes, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Decodes a PNG/JPEG/BMP file to an `(H, W, 3)` tensor in `[0, 255]`.
pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::Input(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f32::from).collect();
    Tensor::from_vec(&[h as usize, w as usize, 3], data)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub skipped: Vec<PathBuf>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Reads a `root/<class>/<image>` tree. Every candidate file is decoded once
/// to confirm it is readable; failures are skipped and listed in the report.
pub fn scan_directory(root: &Path) -> Result<(Dataset, ScanReport)> {
    if !root.is_dir() {
        return Err(Error::Ingestion(format!("{} is not a directory", root.display())));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Ingestion(format!("{} has no class directories", root.display())));
    }
    let mut classes = Vec::new();
    let mut samples = Vec::new();
    let mut report = ScanReport::default();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Ingestion(format!("class directory {} is not valid UTF-8", dir.display())))?;
        let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file()).collect();
        let checked: Vec<(PathBuf, bool)> = files
            .into_par_iter()
            .map(|p| {
                let ok = has_image_extension(&p) && decode_image(&p).is_ok();
                (p, ok)
            })
            .collect();
        let before = samples.len();
        for (path, ok) in checked {
            if !ok {
                log::warn!("skipping undecodable file {}", path.display());
                report.skipped.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            samples.push(Sample::from_file(path, label, rel));
        }
        if samples.len() == before {
            return Err(Error::Ingestion(format!(
                "class directory {name:?} has no decodable images"
            )));
        }
        classes.push(name.to_string());
    }
    if !report.skipped.is_empty() {
        log::warn!("{} file(s) skipped during scan", report.skipped.len());
    }
    Ok((Dataset::new(classes, samples)?, report))
}

/// Stratified split: each class is shuffled with its own seeded stream and
/// the first `floor(ratio * n_c)` samples go to training.
pub fn partition(d: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Partition(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in d.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    for (c, name) in d.classes.iter().enumerate() {
        let n = by_class.get(&c).map_or(0, Vec::len);
        if n < 2 {
            return Err(Error::Partition(format!(
                "class {name:?} has {n} sample(s); need at least 2"
            )));
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (c, mut idx) in by_class {
        idx.shuffle(&mut seed::rng(seed, &[c as u64]));
        let k = (ratio * idx.len() as f64 + 1e-9).floor() as usize;
        train.extend(idx[..k].iter().map(|&i| d.samples[i].clone()));
        val.extend(idx[k..].iter().map(|&i| d.samples[i].clone()));
    }
    Ok((
        Dataset::new(d.classes.clone(), train)?,
        Dataset::new(d.classes.clone(), val)?,
    ))
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f32> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// Per-sample preprocessing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub image_side: usize,
    pub rescale: f64,
    pub standardize: bool,
    /// Applied only when present; validation and test data pass `None`.
    pub augment: Option<AugmentConfig>,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            image_side: DEFAULT_SIDE,
            rescale: RESCALE,
            standardize: false,
            augment: None,
        }
    }
}

impl Pipeline {
    pub fn eval(image_side: usize, standardize: bool) -> Self {
        Pipeline {
            image_side,
            standardize,
            ..Pipeline::default()
        }
    }

    /// resize, rescale, then augment (if configured) for the sample at
    /// `index` of its dataset.
    pub fn prepare(&self, sample: &Sample, index: usize, epoch: u64) -> Result<Tensor<f32>> {
        let img = resize(&sample.image()?, self.image_side)?;
        let img = rescale_by(&img, self.rescale);
        match &self.augment {
            Some(cfg) => augment(&img, cfg, epoch, index as u64),
            None => Ok(img),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels_onehot: Tensor<f32>,
    /// Dataset indices of the samples, in batch order.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len())
            .map(|r| crate::optim::one_hot_class(self.labels_onehot.row(r)).expect("batch labels are one-hot"))
            .collect()
    }
}

/// Lazily assembled mini-batches over a dataset.
pub struct Batches<'a> {
    data: &'a Dataset,
    pipeline: &'a Pipeline,
    order: Vec<usize>,
    batch_size: usize,
    epoch: u64,
    pos: usize,
}

/// Batches of `batch_size` (the last may be short). With a shuffle seed the
/// order is a seeded permutation per epoch; otherwise dataset order is kept.
pub fn batches<'a>(
    data: &'a Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    epoch: u64,
    pipeline: &'a Pipeline,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Input("cannot batch an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if let Some(s) = shuffle_seed {
        order.shuffle(&mut seed::rng(s, &[epoch]));
    }
    Ok(Batches {
        data,
        pipeline,
        order,
        batch_size,
        epoch,
        pos: 0,
    })
}

impl Batches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn assemble(&self, indices: &[usize]) -> Result<Batch> {
        let side = self.pipeline.image_side;
        let k = self.data.num_classes();
        let images: Vec<Tensor<f32>> = indices
            .par_iter()
            .map(|&i| self.pipeline.prepare(&self.data.samples[i], i, self.epoch))
            .collect::<Result<_>>()?;
        let mut pixels = Vec::with_capacity(indices.len() * side * side * 3);
        for img in images {
            pixels.extend_from_slice(img.data());
        }
        let mut images = Tensor::from_vec(&[indices.len(), side, side, 3], pixels)?;
        if self.pipeline.standardize {
            images = standardize(&images)?.0;
        }
        let labels: Vec<f32> = indices
            .iter()
            .flat_map(|&i| one_hot(self.data.samples[i].label, k))
            .collect();
        Ok(Batch {
            images,
            labels_onehot: Tensor::from_vec(&[indices.len(), k], labels)?,
            indices: indices.to_vec(),
        })
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.assemble(&idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FillRule;

    fn synthetic(per_class: &[usize]) -> Dataset {
        let mut samples = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let img = Tensor::create(&[4, 4, 3], FillRule::Constant((c * 30 + i) as f64 % 255.0)).unwrap();
                samples.push(Sample::from_pixels(img, c, format!("c{c}/{i}")).unwrap());
            }
        }
        let classes = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        Dataset::new(classes, samples).unwrap()
    }

    fn paths(d: &Dataset) -> Vec<String> {
        d.samples.iter().map(|s| s.source_path.clone()).collect()
    }

    #[test]
    fn ten_samples_split_eight_two() {
        let d = synthetic(&[10, 10]);
        let (t, v) = partition(&d, 0.8, 1).unwrap();
        assert_eq!(t.class_counts(), vec![8, 8]);
        assert_eq!(v.class_counts(), vec![2, 2]);
    }

    #[test]
    fn partition_is_disjoint_cover_and_seeded() {
        let d = synthetic(&[7, 11, 5]);
        let (t, v) = partition(&d, 0.8, 9).unwrap();
        let mut all: Vec<String> = paths(&t).into_iter().chain(paths(&v)).collect();
        all.sort();
        let mut want = paths(&d);
        want.sort();
        assert_eq!(all, want);
        let (t2, _) = partition(&d, 0.8, 9).unwrap();
        assert_eq!(paths(&t), paths(&t2));
        let (t3, _) = partition(&d, 0.8, 10).unwrap();
        assert_ne!(paths(&t), paths(&t3));
    }

    #[test]
    fn floor_rule_on_full_corpus_total() {
        let counts = [740, 740, 740, 740, 739, 739, 739];
        assert_eq!(counts.iter().sum::<usize>(), 5177);
        let train: usize = counts.iter().map(|&n| (0.8 * n as f64 + 1e-9).floor() as usize).sum();
        assert_eq!((train, 5177 - train), (4141, 1036));
    }

    #[test]
    fn tiny_class_is_rejected() {
        let d = synthetic(&[5, 1]);
        assert!(matches!(partition(&d, 0.8, 0), Err(Error::Partition(_))));
    }

    #[test]
    fn one_hot_rows() {
        assert_eq!(one_hot(3, 7), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_counts_and_shapes() {
        let d = synthetic(&[30, 40]);
        let pipe = Pipeline::eval(6, false);
        let it = batches(&d, 32, Some(5), 0, &pipe).unwrap();
        assert_eq!(it.num_batches(), 3);
        let all: Vec<Batch> = it.map(Result::unwrap).collect();
        assert_eq!(all.iter().map(Batch::len).collect::<Vec<_>>(), vec![32, 32, 6]);
        for b in &all {
            assert_eq!(&b.images.dims()[1..], &[6, 6, 3]);
            assert!(b.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
            for (r, &i) in b.indices.iter().enumerate() {
                assert_eq!(b.labels()[r], d.samples[i].label);
            }
        }
        let mut seen: Vec<usize> = all.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..70).collect::<Vec<_>>());
    }

    #[test]
    fn full_corpus_batch_arithmetic() {
        let d = synthetic(&[3882]);
        let pipe = Pipeline::eval(1, false);
        let it = batches(&d, DEFAULT_BATCH_SIZE, None, 0, &pipe).unwrap();
        assert_eq!(it.num_batches(), 122);
        assert_eq!(3882 - 121 * 32, 10);
    }

    #[test]
    fn augmented_streams_repeat_exactly() {
        let d = synthetic(&[6, 6]);
        let pipe = Pipeline {
            image_side: 8,
            rescale: RESCALE,
            standardize: false,
            augment: Some(AugmentConfig {
                seed: 4,
                ..AugmentConfig::default()
            }),
        };
        let run = || -> Vec<Batch> { batches(&d, 5, Some(2), 3, &pipe).unwrap().map(Result::unwrap).collect() };
        assert_eq!(run(), run());
    }

    #[test]
    fn scan_rejects_missing_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_directory(dir.path()), Err(Error::Ingestion(_))));
        assert!(matches!(
            scan_directory(&dir.path().join("nope")),
            Err(Error::Ingestion(_))
        ));
    }
}
