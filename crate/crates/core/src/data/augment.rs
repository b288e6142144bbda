//! Seeded geometric augmentation.
//!
//! Transforms compose in the fixed order flip, rotate, zoom, shift, all about
//! the image centre. Output pixels are produced by inverse mapping with
//! bilinear sampling; samples that fall outside the source are filled per
//! [`FillMode`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Replicate the nearest edge pixel.
    Nearest,
    /// Zero outside the image.
    Constant,
    /// Mirror about the edge (`d c b a | a b c d | d c b a`).
    Reflect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub zoom_range: f64,
    pub width_shift: f64,
    pub height_shift: f64,
    pub horizontal_flip: bool,
    pub fill_mode: FillMode,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_max_deg: 20.0,
            zoom_range: 0.1,
            width_shift: 0.1,
            height_shift: 0.1,
            horizontal_flip: true,
            fill_mode: FillMode::Nearest,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A configuration that never changes an image.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_max_deg: 0.0,
            zoom_range: 0.0,
            width_shift: 0.0,
            height_shift: 0.0,
            horizontal_flip: false,
            fill_mode: FillMode::Nearest,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..1.0).contains(&v);
        if !(self.rotation_max_deg >= 0.0) || !self.rotation_max_deg.is_finite() {
            return Err(Error::Config(
                "augment.rotation_max_deg must be a non-negative number".into(),
            ));
        }
        if !frac(self.zoom_range) {
            return Err(Error::Config("augment.zoom_range must be in [0, 1)".into()));
        }
        if !frac(self.width_shift) || !frac(self.height_shift) {
            return Err(Error::Config("augment shifts must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Draws the transform for one sample of one epoch.
    pub fn draw(&self, epoch: u64, sample_index: u64) -> Transform {
        let mut rng = seed::rng(self.seed, &[0x6175_6774, epoch, sample_index]);
        let mut sym = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let angle_deg = sym(self.rotation_max_deg);
        let zoom = 1.0 + sym(self.zoom_range);
        let shift_x = sym(self.width_shift);
        let shift_y = sym(self.height_shift);
        let flip = self.horizontal_flip && rng.gen_bool(0.5);
        Transform {
            flip,
            angle_deg,
            zoom,
            shift_x,
            shift_y,
        }
    }
}

/// One concrete augmentation. Shifts are fractions of the image extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub flip: bool,
    pub angle_deg: f64,
    pub zoom: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            flip: false,
            angle_deg: 0.0,
            zoom: 1.0,
            shift_x: 0.0,
            shift_y: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Transform::identity()
    }
}

fn fill_index(i: isize, n: usize, mode: FillMode) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        FillMode::Constant => None,
        FillMode::Nearest => Some(i.clamp(0, n - 1) as usize),
        FillMode::Reflect => {
            let period = 2 * n;
            let m = i.rem_euclid(period);
            Some(if m < n { m } else { period - 1 - m } as usize)
        }
    }
}

/// Applies `t` to an `(H, W, C)` image.
pub fn apply(img: &Tensor<f32>, t: &Transform, fill: FillMode) -> Result<Tensor<f32>> {
    let (h, w, c) = match *img.dims() {
        [h, w, c] => (h, w, c),
        ref d => return Err(Error::Shape(format!("augment expects (H, W, C), got {d:?}"))),
    };
    if t.is_identity() {
        return Ok(img.clone());
    }
    if !(t.zoom > 0.0) {
        return Err(Error::Config(format!("zoom factor must be positive, got {}", t.zoom)));
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = t.angle_deg.to_radians().sin_cos();
    let (tx, ty) = (t.shift_x * w as f64, t.shift_y * h as f64);
    let src = img.data();
    let mut out = Vec::with_capacity(img.len());
    for oy in 0..h {
        for ox in 0..w {
            // undo shift, zoom, rotation, flip in that order
            let (mut u, mut v) = (ox as f64 - cx - tx, oy as f64 - cy - ty);
            u /= t.zoom;
            v /= t.zoom;
            let (ru, rv) = (cos * u + sin * v, -sin * u + cos * v);
            let su = if t.flip { -ru } else { ru };
            let (sx, sy) = (su + cx, rv + cy);

            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let xi = [fill_index(x0, w, fill), fill_index(x0 + 1, w, fill)];
            let yi = [fill_index(y0, h, fill), fill_index(y0 + 1, h, fill)];
            for ch in 0..c {
                let p = |y: Option<usize>, x: Option<usize>| match (y, x) {
                    (Some(y), Some(x)) => src[(y * w + x) * c + ch] as f64,
                    _ => 0.0,
                };
                let mut acc = 0.0;
                // skip zero-weight taps so exact grid hits read a single pixel
                for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                        let wgt = wy * wx;
                        if wgt != 0.0 {
                            acc += wgt * p(yi[dy], xi[dx]);
                        }
                    }
                }
                out.push(acc as f32);
            }
        }
    }
    Tensor::from_vec(&[h, w, c], out)
}

/// Draws and applies the augmentation for `(epoch, sample_index)`.
pub fn augment(img: &Tensor<f32>, cfg: &AugmentConfig, epoch: u64, sample_index: u64) -> Result<Tensor<f32>> {
    apply(img, &cfg.draw(epoch, sample_index), cfg.fill_mode)
}
