use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Element, Tensor};

use super::{check_same_dims, Layer, LayerKind, Mode};

pub const DEFAULT_DROPOUT_RATE: f64 = 0.5;

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; inference
/// is the identity. The mask for a forward pass is a function of
/// `(seed, step)`, and `step` advances once per training forward.
pub struct Dropout<T: Element> {
    rate: f64,
    seed: u64,
    step: u64,
    mask: Option<Tensor<T>>,
    last_dims: Option<Vec<usize>>,
}

impl<T: Element> Dropout<T> {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout {
            rate,
            seed,
            step: 0,
            mask: None,
            last_dims: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    fn make_mask(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let n: usize = dims.iter().product();
        let keep = T::of(1.0 / (1.0 - self.rate));
        let mut rng = seed::rng(self.seed, &[self.step]);
        let data = (0..n)
            .map(|_| if rng.gen::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        Tensor::from_vec(dims, data)
    }
}

impl<T: Element> Layer<T> for Dropout<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.last_dims = Some(x.dims().to_vec());
        match mode {
            Mode::Inference => {
                self.mask = None;
                Ok(x.clone())
            }
            Mode::Training => {
                let mask = self.make_mask(x.dims())?;
                self.step += 1;
                let y = x.mul(&mask)?;
                self.mask = Some(mask);
                Ok(y)
            }
        }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.clone())
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = self
            .last_dims
            .as_ref()
            .ok_or_else(|| super::missing_cache(LayerKind::Dropout))?;
        check_same_dims(LayerKind::Dropout, d_out, dims)?;
        match &self.mask {
            Some(mask) => d_out.mul(mask),
            None => Ok(d_out.clone()),
        }
    }

    fn set_dropout_step(&mut self, step: u64) {
        self.step = step;
    }
}
