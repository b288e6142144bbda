//! Class-coded synthetic images: each class lights one cell of a 3×3 grid.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::{seed, Tensor};

/// The seven object states, in directory-sort order.
pub const STATE_CLASSES: [&str; 7] = ["diced", "grated", "juiced", "julienne", "paste", "sliced", "whole"];

/// Up to nine patterns fit the grid.
pub const MAX_CLASSES: usize = 9;

pub fn class_names(classes: usize) -> Vec<String> {
    if classes <= STATE_CLASSES.len() {
        STATE_CLASSES[..classes].iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|c| format!("class_{c:02}")).collect()
    }
}

/// A `(side, side, 3)` image in `[0, 255]`: bright grid cell `class`, dark
/// elsewhere, with seeded per-pixel jitter.
pub fn pattern(class: usize, index: usize, side: usize, noise_seed: u64) -> Result<Tensor<f32>> {
    if class >= MAX_CLASSES {
        return Err(Error::Config(format!(
            "synthetic patterns support at most {MAX_CLASSES} classes"
        )));
    }
    if side < 3 {
        return Err(Error::Config("synthetic images need a side of at least 3".into()));
    }
    let mut rng = seed::rng(noise_seed, &[class as u64, index as u64]);
    let cell = side.div_ceil(3);
    let (cy, cx) = (class / 3, class % 3);
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let lit = y / cell == cy && x / cell == cx;
            for ch in 0..3 {
                let jitter: f32 = rng.gen_range(0.0..24.0);
                let base = if lit {
                    230.0 - 10.0 * ch as f32
                } else {
                    20.0 + 5.0 * ch as f32
                };
                data.push(if lit { base - jitter } else { base + jitter });
            }
        }
    }
    Tensor::from_vec(&[side, side, 3], data)
}

/// `per_class` in-memory images for each of `classes` classes.
pub fn dataset(classes: usize, per_class: usize, side: usize, noise_seed: u64) -> Result<Dataset> {
    let names = class_names(classes);
    let mut samples = Vec::with_capacity(classes * per_class);
    for (c, name) in names.iter().enumerate() {
        for i in 0..per_class {
            let img = pattern(c, i, side, noise_seed)?;
            samples.push(Sample::from_pixels(img, c, format!("{name}/{i:04}.png"))?);
        }
    }
    Dataset::new(names, samples)
}

/// Writes the same images as [`dataset`] as a class-per-directory PNG tree.
pub fn write_tree(root: &Path, classes: usize, per_class: usize, side: usize, noise_seed: u64) -> Result<()> {
    for (c, name) in class_names(classes).iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let img = pattern(c, i, side, noise_seed)?;
            let bytes: Vec<u8> = img.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
            let path = dir.join(format!("{i:04}.png"));
            image::RgbImage::from_raw(side as u32, side as u32, bytes)
                .ok_or_else(|| Error::Shape("synthetic buffer has the wrong length".into()))?
                .save(&path)
                .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scan_directory;

    #[test]
    fn patterns_are_reproducible_and_distinct() {
        let a = pattern(2, 5, 12, 9).unwrap();
        assert_eq!(a.data(), pattern(2, 5, 12, 9).unwrap().data());
        assert_ne!(a.data(), pattern(3, 5, 12, 9).unwrap().data());
        assert_ne!(a.data(), pattern(2, 6, 12, 9).unwrap().data());
        assert!(a.data().iter().all(|v| (0.0..=255.0).contains(v)));
        assert!(pattern(9, 0, 12, 0).is_err());
    }

    #[test]
    fn tree_round_trips_through_scan() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), 3, 2, 9, 1).unwrap();
        let (d, report) = scan_directory(dir.path()).unwrap();
        assert!(report.skipped.is_empty());
        assert_eq!(d.classes, class_names(3));
        assert_eq!(d.class_counts(), vec![2, 2, 2]);
        let mem = dataset(3, 2, 9, 1).unwrap();
        let disk = d.samples[3].image().unwrap();
        let want = mem.samples[3].image().unwrap();
        assert!(disk.data().iter().zip(want.data()).all(|(a, b)| (a - b).abs() <= 0.5));
    }
}
