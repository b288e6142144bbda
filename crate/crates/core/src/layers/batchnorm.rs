use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::{check_same_dims, missing_cache, Layer, LayerKind, Mode, ParamSlot};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

const GAMMA: usize = 0;
const BETA: usize = 1;
const MOVING_MEAN: usize = 2;
const MOVING_VAR: usize = 3;

/// Per-channel batch normalization over the trailing axis of a rank-2 or
/// rank-4 input.
///
/// Training mode normalizes with the minibatch mean and population variance
/// and folds them into the moving statistics with
/// `moving = momentum * moving + (1 - momentum) * batch`. Inference mode
/// normalizes with the moving statistics.
pub struct BatchNorm<T: Element> {
    channels: usize,
    epsilon: f64,
    momentum: f64,
    params: Vec<ParamSlot<T>>,
    cache: Option<BnCache<T>>,
}

struct BnCache<T> {
    dims: Vec<usize>,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Self::with_config(channels, DEFAULT_EPSILON, DEFAULT_MOMENTUM)
    }

    pub fn with_config(channels: usize, epsilon: f64, momentum: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("batchnorm needs at least one channel".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!(
                "batchnorm epsilon must be positive, got {epsilon}"
            )));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Config(format!("batchnorm momentum {momentum} not in [0, 1]")));
        }
        let ones = Tensor::create(&[channels], crate::tensor::FillRule::Constant(1.0))?;
        let zeros = Tensor::zeros(&[channels])?;
        Ok(BatchNorm {
            channels,
            epsilon,
            momentum,
            params: vec![
                ParamSlot::learned("gamma", ones.clone()),
                ParamSlot::learned("beta", zeros.clone()),
                ParamSlot::statistic("moving_mean", zeros),
                ParamSlot::statistic("moving_variance", ones),
            ],
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn moving_mean(&self) -> &Tensor<T> {
        &self.params[MOVING_MEAN].value
    }

    pub fn moving_var(&self) -> &Tensor<T> {
        &self.params[MOVING_VAR].value
    }

    fn check(&self, dims: &[usize]) -> Result<()> {
        if dims.len() != 2 && dims.len() != 4 {
            return Err(Error::Shape(format!("batchnorm expects rank 2 or 4, got {dims:?}")));
        }
        if *dims.last().unwrap() != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects {} channels, got {dims:?}",
                self.channels
            )));
        }
        Ok(())
    }

    fn batch_moments(&self, x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
        let c = self.channels;
        let m = T::of((x.len() / c) as f64);
        let mut mean = vec![T::zero(); c];
        for row in x.data().chunks_exact(c) {
            for (acc, &v) in mean.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        mean.iter_mut().for_each(|v| *v = *v / m);
        let mut var = vec![T::zero(); c];
        for row in x.data().chunks_exact(c) {
            for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - mu;
                *acc = *acc + d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = *v / m);
        (mean, var)
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> (Vec<T>, Vec<T>) {
        let c = self.channels;
        let gamma = self.params[GAMMA].value.data();
        let beta = self.params[BETA].value.data();
        let mut x_hat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                x_hat.push(h);
                y.push(gamma[ch] * h + beta[ch]);
            }
        }
        (x_hat, y)
    }

    fn inv_std(&self, var: &[T]) -> Vec<T> {
        let eps = T::of(self.epsilon);
        var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect()
    }
}

impl<T: Element> Layer<T> for BatchNorm<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.check(input)?;
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check(x.dims())?;
        let (mean, inv_std) = match mode {
            Mode::Training => {
                let (mean, var) = self.batch_moments(x);
                let mom = T::of(self.momentum);
                let rest = T::one() - mom;
                for (mv, &b) in self.params[MOVING_MEAN].value.data_mut().iter_mut().zip(&mean) {
                    *mv = mom * *mv + rest * b;
                }
                for (mv, &b) in self.params[MOVING_VAR].value.data_mut().iter_mut().zip(&var) {
                    *mv = mom * *mv + rest * b;
                }
                let inv = self.inv_std(&var);
                (mean, inv)
            }
            Mode::Inference => (
                self.moving_mean().data().to_vec(),
                self.inv_std(self.moving_var().data()),
            ),
        };
        let (x_hat, y) = self.normalize(x, &mean, &inv_std);
        self.cache = Some(BnCache {
            dims: x.dims().to_vec(),
            x_hat,
            inv_std,
            mode,
        });
        Tensor::from_vec(x.dims(), y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x.dims())?;
        let inv = self.inv_std(self.moving_var().data());
        let (_, y) = self.normalize(x, self.moving_mean().data(), &inv);
        Tensor::from_vec(x.dims(), y)
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache(LayerKind::BatchNorm))?;
        check_same_dims(LayerKind::BatchNorm, d_out, &cache.dims)?;
        let c = self.channels;
        let gamma = self.params[GAMMA].value.data();
        let dy = d_out.data();

        let mut d_gamma = vec![T::zero(); c];
        let mut d_beta = vec![T::zero(); c];
        for (row_dy, row_h) in dy.chunks_exact(c).zip(cache.x_hat.chunks_exact(c)) {
            for ch in 0..c {
                d_gamma[ch] = d_gamma[ch] + row_dy[ch] * row_h[ch];
                d_beta[ch] = d_beta[ch] + row_dy[ch];
            }
        }

        let mut dx = Vec::with_capacity(dy.len());
        match cache.mode {
            Mode::Inference => {
                for row in dy.chunks_exact(c) {
                    for ch in 0..c {
                        dx.push(row[ch] * gamma[ch] * cache.inv_std[ch]);
                    }
                }
            }
            Mode::Training => {
                // dx = gamma * inv_std / m * (m * dy - sum(dy) - x_hat * sum(dy * x_hat))
                let m = T::of((dy.len() / c) as f64);
                for (row_dy, row_h) in dy.chunks_exact(c).zip(cache.x_hat.chunks_exact(c)) {
                    for ch in 0..c {
                        let k = gamma[ch] * cache.inv_std[ch] / m;
                        dx.push(k * (m * row_dy[ch] - d_beta[ch] - row_h[ch] * d_gamma[ch]));
                    }
                }
            }
        }
        self.params[GAMMA].write_grad(&d_gamma);
        self.params[BETA].write_grad(&d_beta);
        Tensor::from_vec(&cache.dims, dx)
    }

    fn params(&self) -> &[ParamSlot<T>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [ParamSlot<T>] {
        &mut self.params
    }
}
