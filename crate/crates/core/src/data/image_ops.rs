use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_SIDE: usize = 363;
pub const RESCALE: f64 = 1.0 / 255.0;

fn hwc(img: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *img.dims() {
        [h, w, c] => Ok((h, w, c)),
        ref d => Err(Error::Shape(format!("expected an (H, W, C) image, got {d:?}"))),
    }
}

/// Bilinear resize to `side x side` using pixel-centre alignment with edge
/// clamping. Same-size input is returned unchanged.
pub fn resize(img: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    let (h, w, c) = hwc(img)?;
    if side == 0 {
        return Err(Error::Config("resize side must be positive".into()));
    }
    if h == side && w == side {
        return Ok(img.clone());
    }
    let src = img.data();
    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(side, h);
    let xs = axis(side, w);
    let mut out = Vec::with_capacity(side * side * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p = |y: usize, x: usize| src[(y * w + x) * c + ch] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Tensor::from_vec(&[side, side, c], out)
}

/// Multiplies every value by 1/255.
pub fn rescale<T: Element>(img: &Tensor<T>) -> Tensor<T> {
    rescale_by(img, RESCALE)
}

pub fn rescale_by<T: Element>(img: &Tensor<T>, factor: f64) -> Tensor<T> {
    img.map(|v| T::of(v.as_f64() * factor))
}

/// Per-image standardization of a `(B, H, W, C)` batch: subtract the image
/// mean, divide by the image's population standard deviation. Images with
/// zero variance are left unchanged; their count is returned.
pub fn standardize(images: &Tensor<f32>) -> Result<(Tensor<f32>, usize)> {
    if images.rank() != 4 {
        return Err(Error::Shape(format!(
            "standardize expects (B,H,W,C), got {:?}",
            images.dims()
        )));
    }
    let per: usize = images.dims()[1..].iter().product();
    let mut out = images.clone();
    let mut skipped = 0;
    for img in out.data_mut().chunks_exact_mut(per) {
        let n = per as f64;
        let mean = img.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            skipped += 1;
            continue;
        }
        let std = var.sqrt();
        img.iter_mut().for_each(|v| *v = ((*v as f64 - mean) / std) as f32);
    }
    if skipped > 0 {
        log::warn!("standardize: {skipped} constant image(s) left unchanged");
    }
    Ok((out, skipped))
}
