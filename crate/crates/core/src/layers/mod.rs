//! Layer kinds with forward passes, reverse-mode backward passes and
//! parameter storage.
//!
//! Every layer caches what its backward pass needs during [`Layer::forward`].
//! [`Layer::infer`] is the cache-free inference path and takes `&self`, so a
//! built network can serve concurrent predictions.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{softmax_rows, Relu, Softmax};
pub use batchnorm::{BatchNorm, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::{Dropout, DEFAULT_DROPOUT_RATE};
pub use pool::{Flatten, MaxPool2d};

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool2d,
    Flatten,
    Dense,
    Dropout,
    Softmax,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::Dropout => "dropout",
            LayerKind::Softmax => "softmax",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a slot is a learned parameter or running statistics. Statistics
/// are never trainable, whatever freeze policy is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotRole {
    Learned,
    Statistic,
}

#[derive(Debug, Clone)]
pub struct ParamSlot<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    trainable: bool,
    role: SlotRole,
    grad_ready: bool,
}

impl<T: Element> ParamSlot<T> {
    pub fn learned(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        ParamSlot {
            name: name.into(),
            value,
            grad,
            trainable: true,
            role: SlotRole::Learned,
            grad_ready: false,
        }
    }

    pub fn statistic(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        ParamSlot {
            name: name.into(),
            value,
            grad,
            trainable: false,
            role: SlotRole::Statistic,
            grad_ready: false,
        }
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn role(&self) -> SlotRole {
        self.role
    }

    /// No-op on statistic slots.
    pub fn set_trainable(&mut self, trainable: bool) {
        if self.role == SlotRole::Learned {
            self.trainable = trainable;
        }
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        self.grad_ready = false;
    }

    /// Stores a freshly computed gradient; the optimizer consumes it.
    pub fn write_grad(&mut self, grad: &[T]) {
        self.grad.data_mut().copy_from_slice(grad);
        self.grad_ready = true;
    }

    pub fn grad_ready(&self) -> bool {
        self.grad_ready
    }

    pub(crate) fn consume_grad(&mut self) {
        self.grad_ready = false;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
}

impl ParamCount {
    pub fn of_slots<T: Element>(slots: &[ParamSlot<T>]) -> Self {
        slots.iter().fold(ParamCount::default(), |acc, s| {
            let n = s.numel();
            if s.trainable() {
                acc + ParamCount {
                    total: n,
                    trainable: n,
                    frozen: 0,
                }
            } else {
                acc + ParamCount {
                    total: n,
                    trainable: 0,
                    frozen: n,
                }
            }
        })
    }
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;

    fn add(self, o: ParamCount) -> ParamCount {
        ParamCount {
            total: self.total + o.total,
            trainable: self.trainable + o.trainable,
            frozen: self.frozen + o.frozen,
        }
    }
}

impl std::iter::Sum for ParamCount {
    fn sum<I: Iterator<Item = ParamCount>>(iter: I) -> Self {
        iter.fold(ParamCount::default(), |a, b| a + b)
    }
}

pub trait Layer<T: Element>: Send + Sync {
    fn kind(&self) -> LayerKind;

    /// Output dims for the given input dims (batch axis included).
    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>>;

    /// Forward pass that records what [`Layer::backward`] needs.
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Inference-mode forward pass with no side effects.
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Returns the input gradient and overwrites the parameter gradients.
    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> &[ParamSlot<T>] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [ParamSlot<T>] {
        &mut []
    }

    fn param_count(&self) -> ParamCount {
        ParamCount::of_slots(self.params())
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.params_mut().iter_mut().for_each(|p| p.set_trainable(trainable));
    }

    /// Only meaningful for dropout.
    fn set_dropout_step(&mut self, _step: u64) {}
}

/// Glorot-uniform initialization on `(-limit, limit)`, `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Element>(dims: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = seed::rng(seed, &[0x676c_6f72]);
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(dims, data)
}

pub(crate) fn missing_cache(kind: LayerKind) -> Error {
    Error::State(format!("{kind} backward called without a preceding forward"))
}

pub(crate) fn check_same_dims<T: Element>(kind: LayerKind, d_out: &Tensor<T>, expected: &[usize]) -> Result<()> {
    if d_out.dims() != expected {
        return Err(Error::Shape(format!(
            "{kind} backward: gradient shape {:?} does not match forward output {expected:?}",
            d_out.dims()
        )));
    }
    Ok(())
}
