//! Categorical cross-entropy and the SGD / RMSprop / Adam update rules.
//!
//! Optimizers only ever touch slots whose `trainable` flag is set; frozen
//! slots keep their exact bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ParamSlot;
use crate::tensor::{Element, Tensor};

/// Probability floor used by the loss.
pub const PROB_CLIP: f64 = 1e-7;

/// Mean negative log-probability of the true class.
///
/// Returns the loss and its gradient with respect to `probs`.
pub fn categorical_crossentropy<T: Element>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if probs.rank() != 2 || probs.dims() != targets.dims() {
        return Err(Error::Shape(format!(
            "loss expects matching (N, K) tensors, got {:?} and {:?}",
            probs.dims(),
            targets.dims()
        )));
    }
    let (n, k) = (probs.dims()[0], probs.dims()[1]);
    let clip = T::of(PROB_CLIP);
    let inv_n = T::one() / T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); n * k];
    for r in 0..n {
        let p = probs.row(r);
        let total = p.iter().fold(T::zero(), |a, &b| a + b);
        if (total - T::one()).abs() > T::of(1e-4) {
            return Err(Error::Input(format!("probability row {r} sums to {total}")));
        }
        let class =
            one_hot_class(targets.row(r)).ok_or_else(|| Error::Input(format!("target row {r} is not one-hot")))?;
        let pt = p[class];
        if pt > clip {
            loss = loss - pt.ln();
            grad[r * k + class] = -inv_n / pt;
        } else {
            loss = loss - clip.ln();
        }
    }
    Ok((loss * inv_n, Tensor::from_vec(&[n, k], grad)?))
}

/// Index of the single 1 in a one-hot row.
pub fn one_hot_class<T: Element>(row: &[T]) -> Option<usize> {
    let mut found = None;
    for (i, &v) in row.iter().enumerate() {
        if v == T::one() {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        } else if v != T::zero() {
            return None;
        }
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        #[serde(default = "defaults::sgd_lr")]
        lr: f64,
        #[serde(default = "defaults::sgd_decay")]
        decay: f64,
        #[serde(default = "defaults::sgd_momentum")]
        momentum: f64,
    },
    Rmsprop {
        #[serde(default = "defaults::rmsprop_lr")]
        lr: f64,
        #[serde(default = "defaults::rmsprop_rho")]
        rho: f64,
        #[serde(default = "defaults::epsilon")]
        epsilon: f64,
    },
    Adam {
        #[serde(default = "defaults::adam_lr")]
        lr: f64,
        #[serde(default = "defaults::adam_beta1")]
        beta1: f64,
        #[serde(default = "defaults::adam_beta2")]
        beta2: f64,
        #[serde(default = "defaults::epsilon")]
        epsilon: f64,
    },
}

pub mod defaults {
    pub fn sgd_lr() -> f64 {
        1e-4
    }
    pub fn sgd_decay() -> f64 {
        1e-6
    }
    pub fn sgd_momentum() -> f64 {
        0.9
    }
    pub fn rmsprop_lr() -> f64 {
        1e-3
    }
    pub fn rmsprop_rho() -> f64 {
        0.9
    }
    pub fn adam_lr() -> f64 {
        1e-3
    }
    pub fn adam_beta1() -> f64 {
        0.9
    }
    pub fn adam_beta2() -> f64 {
        0.999
    }
    pub fn epsilon() -> f64 {
        1e-7
    }
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        OptimizerConfig::Sgd {
            lr: defaults::sgd_lr(),
            decay: defaults::sgd_decay(),
            momentum: defaults::sgd_momentum(),
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerConfig::Rmsprop {
            lr: defaults::rmsprop_lr(),
            rho: defaults::rmsprop_rho(),
            epsilon: defaults::epsilon(),
        }
    }

    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            lr: defaults::adam_lr(),
            beta1: defaults::adam_beta1(),
            beta2: defaults::adam_beta2(),
            epsilon: defaults::epsilon(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd { .. } => "sgd",
            OptimizerConfig::Rmsprop { .. } => "rmsprop",
            OptimizerConfig::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{}: {what}", self.name())));
        match *self {
            OptimizerConfig::Sgd { lr, decay, momentum } => {
                if !(lr > 0.0) {
                    return bad("lr must be positive");
                }
                if !(decay >= 0.0) {
                    return bad("decay must be non-negative");
                }
                if !(0.0..1.0).contains(&momentum) {
                    return bad("momentum must be in [0, 1)");
                }
            }
            OptimizerConfig::Rmsprop { lr, rho, epsilon } => {
                if !(lr > 0.0) {
                    return bad("lr must be positive");
                }
                if !(0.0..1.0).contains(&rho) {
                    return bad("rho must be in [0, 1)");
                }
                if !(epsilon > 0.0) {
                    return bad("epsilon must be positive");
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                epsilon,
            } => {
                if !(lr > 0.0) {
                    return bad("lr must be positive");
                }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return bad("betas must be in [0, 1)");
                }
                if !(epsilon > 0.0) {
                    return bad("epsilon must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Per-parameter auxiliary buffers, created lazily on the first step.
#[derive(Debug, Clone)]
enum Aux<T> {
    Velocity(Vec<T>),
    SquareAvg(Vec<T>),
    Moments { m: Vec<T>, v: Vec<T> },
}

impl<T> Aux<T> {
    fn len(&self) -> usize {
        match self {
            Aux::Velocity(v) | Aux::SquareAvg(v) => v.len(),
            Aux::Moments { m, .. } => m.len(),
        }
    }
}

/// Optimizer state bound to one ordered list of parameter slots.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Element> {
    config: OptimizerConfig,
    aux: Vec<Option<Aux<T>>>,
    iteration: u64,
}

impl<T: Element> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            aux: Vec::new(),
            iteration: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Learning rate in effect for the next step (inverse-time decay for SGD).
    pub fn current_lr(&self) -> f64 {
        match self.config {
            OptimizerConfig::Sgd { lr, decay, .. } => lr / (1.0 + decay * self.iteration as f64),
            OptimizerConfig::Rmsprop { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    /// One update over `params`. Slot `i` keeps its auxiliary state across
    /// calls, so callers must pass slots in the same order every time.
    pub fn step(&mut self, params: &mut [&mut ParamSlot<T>]) -> Result<()> {
        if self.aux.len() < params.len() {
            self.aux.resize(params.len(), None);
        }
        for p in params.iter() {
            if p.trainable() && !p.grad_ready() {
                return Err(Error::State(format!("no gradient for trainable slot {}", p.name)));
            }
        }
        let lr = self.current_lr();
        let t = self.iteration + 1;
        for (slot, aux) in params.iter_mut().zip(self.aux.iter_mut()) {
            if !slot.trainable() {
                continue;
            }
            let n = slot.numel();
            if let Some(a) = aux.as_ref() {
                if a.len() != n {
                    return Err(Error::State(format!("slot {} changed size between steps", slot.name)));
                }
            }
            let ParamSlot { value, grad, .. } = &mut **slot;
            let w = value.data_mut();
            let g = grad.data();
            match self.config {
                OptimizerConfig::Sgd { momentum, .. } => {
                    let a = aux.get_or_insert_with(|| Aux::Velocity(vec![T::zero(); n]));
                    let Aux::Velocity(vel) = a else { unreachable!() };
                    let (mom, lr) = (T::of(momentum), T::of(lr));
                    for i in 0..n {
                        vel[i] = mom * vel[i] - lr * g[i];
                        w[i] = w[i] + vel[i];
                    }
                }
                OptimizerConfig::Rmsprop { rho, epsilon, .. } => {
                    let a = aux.get_or_insert_with(|| Aux::SquareAvg(vec![T::zero(); n]));
                    let Aux::SquareAvg(avg) = a else { unreachable!() };
                    let (rho, rest, eps, lr) = (T::of(rho), T::of(1.0 - rho), T::of(epsilon), T::of(lr));
                    for i in 0..n {
                        avg[i] = rho * avg[i] + rest * g[i] * g[i];
                        w[i] = w[i] - lr * g[i] / (avg[i].sqrt() + eps);
                    }
                }
                OptimizerConfig::Adam {
                    beta1, beta2, epsilon, ..
                } => {
                    let a = aux.get_or_insert_with(|| Aux::Moments {
                        m: vec![T::zero(); n],
                        v: vec![T::zero(); n],
                    });
                    let Aux::Moments { m, v } = a else { unreachable!() };
                    let c1 = T::of(1.0 - beta1.powf(t as f64));
                    let c2 = T::of(1.0 - beta2.powf(t as f64));
                    let (b1, b2) = (T::of(beta1), T::of(beta2));
                    let (r1, r2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
                    let (eps, lr) = (T::of(epsilon), T::of(lr));
                    for i in 0..n {
                        m[i] = b1 * m[i] + r1 * g[i];
                        v[i] = b2 * v[i] + r2 * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        for p in params.iter_mut() {
            p.consume_grad();
        }
        self.iteration += 1;
        Ok(())
    }

    /// Auxiliary buffer of slot `i` (velocity, squared average, or first moment).
    pub fn aux_state(&self, i: usize) -> Option<&[T]> {
        self.aux.get(i)?.as_ref().map(|a| match a {
            Aux::Velocity(v) | Aux::SquareAvg(v) => v.as_slice(),
            Aux::Moments { m, .. } => m.as_slice(),
        })
    }
}
