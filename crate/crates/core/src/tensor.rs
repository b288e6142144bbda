//! Dense row-major tensors of rank 1 to 4.
//!
//! Batched images use the `(N, H, W, C)` layout throughout the crate. The
//! element type is either `f32` (training) or `f64` (gradient checking), see
//! [`Element`].

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

/// Scalar types a [`Tensor`] can hold.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Sum + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const PRECISION: Precision;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Element for f32 {
    const PRECISION: Precision = Precision::Single;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::Double;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Ordered list of positive extents.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Shape(format!(
                "rank must be between 1 and {MAX_RANK}, got {}",
                dims.len()
            )));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Shape(format!("extent {pos} of {dims:?} is zero")));
        }
        let mut count: u64 = 1;
        for &d in dims {
            count = count
                .checked_mul(d as u64)
                .filter(|&c| c < (1u64 << 63))
                .ok_or_else(|| Error::Shape(format!("element count of {dims:?} overflows")))?;
        }
        Ok(Shape { dims: dims.to_vec() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.dims[i + 1];
        }
        strides
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(Error::Shape(format!(
                "index {index:?} has wrong rank for shape {self:?}"
            )));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            if i >= d {
                return Err(Error::Shape(format!("index {index:?} out of bounds for {self:?}")));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        let mut index = vec![0; self.dims.len()];
        for (slot, &d) in index.iter_mut().zip(&self.dims).rev() {
            *slot = offset % d;
            offset /= d;
        }
        index
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(&dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.dims
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillRule {
    Constant(f64),
    Uniform { lo: f64, hi: f64, seed: u64 },
    Normal { mean: f64, std: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    #[inline]
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Sum,
    Mean,
    /// Population variance (divides by the element count).
    Variance,
    Max,
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Element> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("precision", &T::PRECISION)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn create(dims: &[usize], fill: FillRule) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        let data = match fill {
            FillRule::Constant(c) => vec![T::of(c); n],
            FillRule::Uniform { lo, hi, seed } => {
                if !(lo < hi) {
                    return Err(Error::Config(format!("uniform fill needs lo < hi, got [{lo}, {hi})")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| T::of(rng.gen_range(lo..hi))).collect()
            }
            FillRule::Normal { mean, std, seed } => {
                let dist = Normal::new(mean, std).map_err(|e| Error::Config(format!("normal fill: {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| T::of(dist.sample(&mut rng))).collect()
            }
        };
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::create(dims, FillRule::Constant(0.0))
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "buffer of {} elements does not fit shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_shape_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "buffer of {} elements does not fit shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.shape.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let off = self.shape.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise binary op. `other` must have the same shape, or be rank-1
    /// with the length of `self`'s trailing (channel) extent.
    pub fn elementwise(&self, other: &Tensor<T>, op: BinaryOp) -> Result<Self> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| op.apply(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        let channels = *self.dims().last().expect("rank >= 1");
        if other.rank() == 1 && other.len() == channels {
            let data = self
                .data
                .chunks_exact(channels)
                .flat_map(|row| row.iter().zip(&other.data).map(|(&a, &b)| op.apply(a, b)))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        Err(Error::Shape(format!(
            "cannot combine {:?} with {:?}",
            self.shape, other.shape
        )))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(other, BinaryOp::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(other, BinaryOp::Div)
    }

    /// `[m, k] x [k, n] -> [m, n]`, summing over `k` in ascending order.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.dims()[0], self.dims()[1]);
        let (k2, n) = (other.dims()[0], other.dims()[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Tensor::from_vec(&[m, n], out)
    }

    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!("transpose needs rank 2, got {:?}", self.shape)));
        }
        let (r, c) = (self.dims()[0], self.dims()[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(&[c, r], out)
    }

    /// Reduces over `axes`, removing them from the shape. Reducing every axis
    /// yields a `[1]` tensor.
    pub fn reduce(&self, axes: &[usize], stat: Stat) -> Result<Self> {
        let rank = self.rank();
        let mut reduced = [false; MAX_RANK];
        for &a in axes {
            if a >= rank {
                return Err(Error::Shape(format!("axis {a} invalid for rank {rank}")));
            }
            reduced[a] = true;
        }
        let in_dims = self.dims();
        let kept: Vec<usize> = (0..rank).filter(|&a| !reduced[a]).collect();
        let out_dims: Vec<usize> = if kept.is_empty() {
            vec![1]
        } else {
            kept.iter().map(|&a| in_dims[a]).collect()
        };
        let out_shape = Shape::new(&out_dims)?;
        let count: usize = (0..rank).filter(|&a| reduced[a]).map(|a| in_dims[a]).product();
        let out_len = out_shape.numel();

        let out_index = |flat: usize| -> usize {
            let idx = self.shape.unravel(flat);
            kept.iter().fold(0, |acc, &a| acc * in_dims[a] + idx[a])
        };

        let init = if stat == Stat::Max {
            T::neg_infinity()
        } else {
            T::zero()
        };
        let mut acc = vec![init; out_len];
        for (flat, &v) in self.data.iter().enumerate() {
            let o = out_index(flat);
            match stat {
                Stat::Max => {
                    if v > acc[o] {
                        acc[o] = v;
                    }
                }
                _ => acc[o] = acc[o] + v,
            }
        }
        let n = T::of(count as f64);
        match stat {
            Stat::Sum | Stat::Max => {}
            Stat::Mean => acc.iter_mut().for_each(|v| *v = *v / n),
            Stat::Variance => {
                let mean: Vec<T> = acc.iter().map(|&s| s / n).collect();
                let mut sq = vec![T::zero(); out_len];
                for (flat, &v) in self.data.iter().enumerate() {
                    let o = out_index(flat);
                    let d = v - mean[o];
                    sq[o] = sq[o] + d * d;
                }
                acc = sq.into_iter().map(|s| s / n).collect();
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: acc,
        })
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// Index of the largest element of a rank-1 tensor; ties go to the lowest index.
    pub fn argmax(&self) -> Result<usize> {
        if self.rank() != 1 {
            return Err(Error::Shape(format!("argmax needs rank 1, got {:?}", self.shape)));
        }
        Ok(argmax_slice(&self.data))
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.dims()[1];
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Lowest index attaining the maximum. NaNs are never selected over a number.
pub fn argmax_slice<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

const PAR_MATMUL_THRESHOLD: usize = 1 << 15;

/// Row-major `c[m,n] = a[m,k] * b[k,n]`; `c` is overwritten.
pub(crate) fn matmul_into<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |(i, crow): (usize, &mut [T])| {
        crow.iter_mut().for_each(|v| *v = T::zero());
        let arow = &a[i * k..(i + 1) * k];
        for (t, &av) in arow.iter().enumerate() {
            let brow = &b[t * n..(t + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m * n * k >= PAR_MATMUL_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Output geometry of a sliding 2-D window over an `(N, H, W, C)` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowView {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl WindowView {
    pub fn new(
        in_hw: (usize, usize),
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let (in_h, in_w) = in_hw;
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Shape("kernel and stride extents must be positive".into()));
        }
        let (out_h, pad_top) = axis_geometry(in_h, kernel.0, stride.0, padding)?;
        let (out_w, pad_left) = axis_geometry(in_w, kernel.1, stride.1, padding)?;
        Ok(WindowView {
            in_h,
            in_w,
            kernel,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    /// Input coordinate of kernel tap `(a, b)` for output `(i, j)`, or `None`
    /// when the tap falls in the zero padding.
    #[inline]
    pub fn source(&self, i: usize, j: usize, a: usize, b: usize) -> Option<(usize, usize)> {
        let y = (i * self.stride.0 + a).checked_sub(self.pad_top)?;
        let x = (j * self.stride.1 + b).checked_sub(self.pad_left)?;
        (y < self.in_h && x < self.in_w).then_some((y, x))
    }

    /// All `(output position, taps)` pairs in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = ((usize, usize), Vec<Option<(usize, usize)>>)> + '_ {
        (0..self.out_h).flat_map(move |i| {
            (0..self.out_w).map(move |j| {
                let taps = (0..self.kernel.0)
                    .flat_map(|a| (0..self.kernel.1).map(move |b| (a, b)))
                    .map(|(a, b)| self.source(i, j, a, b))
                    .collect();
                ((i, j), taps)
            })
        })
    }
}

/// Returns (output extent, leading pad) for one spatial axis. Same padding
/// puts the odd extra row/column at the bottom/right.
fn axis_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::Shape(format!(
                    "kernel extent {kernel} exceeds input extent {input}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            if kernel > input + total {
                return Err(Error::Shape(format!(
                    "kernel extent {kernel} exceeds padded extent {}",
                    input + total
                )));
            }
            Ok((out, total / 2))
        }
    }
}

/// Window geometry for a rank-4 `(N, H, W, C)` tensor.
pub fn pad_and_window<T: Element>(
    a: &Tensor<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
) -> Result<WindowView> {
    if a.rank() != 4 {
        return Err(Error::Shape(format!("expected (N,H,W,C), got {:?}", a.shape())));
    }
    WindowView::new((a.dims()[1], a.dims()[2]), kernel, stride, padding)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn constant_fills() {
        let z = Tensor::<f64>::create(&[2, 2], FillRule::Constant(0.0)).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let o = Tensor::<f32>::create(&[3], FillRule::Constant(1.0)).unwrap();
        assert_eq!(o.data(), &[1.0; 3]);
    }

    #[test]
    fn seeded_uniform_fill_is_reproducible() {
        let rule = FillRule::Uniform {
            lo: -1.0,
            hi: 1.0,
            seed: 42,
        };
        let a = Tensor::<f32>::create(&[4], rule).unwrap();
        let b = Tensor::<f32>::create(&[4], rule).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn zero_extent_is_rejected() {
        assert!(matches!(Tensor::<f32>::zeros(&[2, 0]), Err(Error::Shape(_))));
        assert!(matches!(Shape::new(&[1, 1, 1, 1, 1]), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_basics() {
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        let b = t(&[3], &[10.0, 20.0, 30.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 33.0]);
        assert!(a.sub(&a).unwrap().data().iter().all(|&v| v == 0.0));
        let bad = t(&[2], &[1.0, 2.0]);
        assert!(matches!(a.add(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn channel_broadcast_matches_loop() {
        let x = Tensor::<f64>::create(
            &[2, 2, 2, 3],
            FillRule::Uniform {
                lo: -1.0,
                hi: 1.0,
                seed: 3,
            },
        )
        .unwrap();
        let bias = t(&[3], &[0.5, -1.0, 2.0]);
        let out = x.add(&bias).unwrap();
        for n in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    for c in 0..3 {
                        let want = x.get(&[n, i, j, c]).unwrap() + bias.get(&[c]).unwrap();
                        assert_eq!(out.get(&[n, i, j, c]).unwrap(), want);
                    }
                }
            }
        }
    }

    #[test]
    fn division_by_zero_is_flagged() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[2], &[0.0, 1.0]);
        let q = a.div(&b).unwrap();
        assert!(q.data()[0].is_infinite());
        assert!(!q.all_finite());
    }

    #[test]
    fn matmul_small_cases() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(id.matmul(&m).unwrap().data(), m.data());
        let k = 7;
        let row = Tensor::<f64>::create(&[1, k], FillRule::Constant(1.0)).unwrap();
        let col = Tensor::<f64>::create(&[k, 1], FillRule::Constant(1.0)).unwrap();
        assert_eq!(row.matmul(&col).unwrap().data(), &[k as f64]);
        assert!(matches!(m.matmul(&row), Err(Error::Shape(_))));
    }

    #[test]
    fn reduce_small_cases() {
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        assert_eq!(a.reduce(&[0], Stat::Mean).unwrap().data(), &[2.0]);
        let c = t(&[3], &[1.0, 1.0, 1.0]);
        assert_eq!(c.reduce(&[0], Stat::Variance).unwrap().data(), &[0.0]);
        let m = t(&[2, 3], &[1.0, 5.0, 2.0, 7.0, 0.0, 3.0]);
        assert_eq!(m.reduce(&[0], Stat::Max).unwrap().data(), &[7.0, 5.0, 3.0]);
        assert_eq!(m.reduce(&[1], Stat::Sum).unwrap().data(), &[8.0, 10.0]);
        assert!(m.reduce(&[2], Stat::Sum).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(t(&[3], &[0.1, 0.7, 0.2]).argmax().unwrap(), 1);
        assert_eq!(t(&[2], &[0.5, 0.5]).argmax().unwrap(), 0);
    }

    #[test]
    fn window_geometry() {
        let same = WindowView::new((10, 10), (3, 3), (1, 1), Padding::Same).unwrap();
        assert_eq!((same.out_h, same.out_w), (10, 10));
        assert_eq!((same.pad_top, same.pad_left), (1, 1));
        let valid = WindowView::new((5, 5), (2, 2), (2, 2), Padding::Valid).unwrap();
        assert_eq!((valid.out_h, valid.out_w), (2, 2));
        let tiled = WindowView::new((4, 4), (2, 2), (2, 2), Padding::Valid).unwrap();
        let mut seen = [0; 16];
        for (_, taps) in tiled.positions() {
            for (y, x) in taps.into_iter().flatten() {
                seen[y * 4 + x] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(WindowView::new((2, 2), (3, 3), (1, 1), Padding::Valid).is_err());
        // even kernel: extra padding goes bottom/right
        let even = WindowView::new((4, 4), (2, 2), (1, 1), Padding::Same).unwrap();
        assert_eq!(even.pad_top, 0);
        assert_eq!(even.source(3, 3, 1, 1), None);
    }
}
