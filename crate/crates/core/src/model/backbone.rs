//! Feature extractors the classification head attaches to.
//!
//! The pretrained backbone itself is not shipped. [`ShapeOnlyBackbone`]
//! honours the output-shape and parameter-count contract of an Inception-v3
//! style `mixed10` output, and [`TinyBackbone`] is a small trainable conv
//! stack used to exercise top-k fine-tuning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Conv2d, Layer, Mode, ParamCount, ParamSlot, Relu};
use crate::seed;
use crate::tensor::{Element, Padding, Tensor};

/// Parameter count of the feature extractor behind the published head.
pub const INCEPTION_V3_PARAMS: usize = 21_802_784;
pub const MIXED10_CHANNELS: usize = 2048;
/// Smallest input side the Inception-v3 reduction chain accepts.
pub const MIN_SHAPE_ONLY_SIDE: usize = 75;

pub trait Backbone<T: Element>: Send + Sync {
    fn spec(&self) -> BackboneSpec;

    /// Name of the output node, used in the summary's "Connected to" column.
    fn output_name(&self) -> String;

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Backpropagates through trainable units, filling their gradients.
    /// Returns the image gradient only when every unit was traversed.
    fn backward(&mut self, d_features: &Tensor<T>) -> Result<Option<Tensor<T>>>;

    /// Number of freezable units, bottom (input side) first.
    fn unit_count(&self) -> usize;

    fn unit_params(&self, unit: usize) -> ParamCount;

    fn unit_trainable(&self, unit: usize) -> bool;

    fn set_unit_trainable(&mut self, unit: usize, trainable: bool);

    /// Materialized parameter slots, in unit order.
    fn params(&self) -> Vec<&ParamSlot<T>>;

    fn params_mut(&mut self) -> Vec<&mut ParamSlot<T>>;

    /// Named slots as `(layer name, slot)` for checkpointing.
    fn named_params(&self) -> Vec<(String, &ParamSlot<T>)>;

    fn param_count(&self) -> ParamCount;

    fn any_trainable(&self) -> bool {
        (0..self.unit_count()).any(|u| self.unit_trainable(u))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneSpec {
    ShapeOnly {
        #[serde(default = "default_declared_params")]
        declared_params: usize,
    },
    TinyTrainable {
        units: usize,
        channels: usize,
    },
}

fn default_declared_params() -> usize {
    INCEPTION_V3_PARAMS
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::ShapeOnly {
            declared_params: INCEPTION_V3_PARAMS,
        }
    }
}

impl BackboneSpec {
    pub fn build<T: Element>(&self, seed: u64) -> Result<Box<dyn Backbone<T>>> {
        Ok(match *self {
            BackboneSpec::ShapeOnly { declared_params } => Box::new(ShapeOnlyBackbone::new(declared_params, seed)),
            BackboneSpec::TinyTrainable { units, channels } => Box::new(TinyBackbone::new(units, channels, seed)?),
        })
    }
}

/// Spatial side of `mixed10` for a square input: two stride-2 stem
/// reductions with valid convs, a stride-2 pool, then two grid reductions.
pub fn inception_output_side(side: usize) -> Result<usize> {
    if side < MIN_SHAPE_ONLY_SIDE {
        return Err(Error::Shape(format!(
            "shape-only backbone needs inputs of at least {MIN_SHAPE_ONLY_SIDE} pixels, got {side}"
        )));
    }
    let reduce = |s: usize| (s - 3) / 2 + 1;
    let s = reduce(side); // conv 3x3 /2 valid
    let s = s - 2; // conv 3x3 valid
    let s = reduce(s); // maxpool 3x3 /2
    let s = s - 2; // conv 3x3 valid
    let s = reduce(s); // maxpool 3x3 /2
    let s = reduce(s); // mixed6a
    Ok(reduce(s)) // mixed7a
}

/// Stand-in for a frozen pretrained extractor: emits features of the
/// contract shape that are a deterministic function of `(seed, image)` and
/// declares a fixed, fully frozen parameter count.
pub struct ShapeOnlyBackbone {
    declared_params: usize,
    seed: u64,
}

impl ShapeOnlyBackbone {
    pub fn new(declared_params: usize, seed: u64) -> Self {
        ShapeOnlyBackbone { declared_params, seed }
    }

    fn features<T: Element>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.output_dims_inner(x.dims())?;
        let per_in: usize = x.dims()[1..].iter().product();
        let per_out: usize = out[1..].iter().product();
        let mut data = Vec::with_capacity(out[0] * per_out);
        for sample in x.data().chunks_exact(per_in) {
            let digest = sample.iter().fold(0u64, |acc, v| seed::mix(acc ^ v.as_f64().to_bits()));
            let mut rng = seed::rng(self.seed, &[digest]);
            data.extend((0..per_out).map(|_| T::of(rng.gen::<f64>())));
        }
        Tensor::from_vec(&out, data)
    }

    fn output_dims_inner(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[3] != 3 || input[1] != input[2] {
            return Err(Error::Shape(format!(
                "shape-only backbone expects square (N, S, S, 3) images, got {input:?}"
            )));
        }
        let side = inception_output_side(input[1])?;
        Ok(vec![input[0], side, side, MIXED10_CHANNELS])
    }
}

impl<T: Element> Backbone<T> for ShapeOnlyBackbone {
    fn spec(&self) -> BackboneSpec {
        BackboneSpec::ShapeOnly {
            declared_params: self.declared_params,
        }
    }

    fn output_name(&self) -> String {
        "mixed10".into()
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.output_dims_inner(input)
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.features(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.features(x)
    }

    fn backward(&mut self, _d: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        Ok(None)
    }

    fn unit_count(&self) -> usize {
        0
    }

    fn unit_params(&self, _unit: usize) -> ParamCount {
        ParamCount::default()
    }

    fn unit_trainable(&self, _unit: usize) -> bool {
        false
    }

    fn set_unit_trainable(&mut self, _unit: usize, _trainable: bool) {}

    fn params(&self) -> Vec<&ParamSlot<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamSlot<T>> {
        Vec::new()
    }

    fn named_params(&self) -> Vec<(String, &ParamSlot<T>)> {
        Vec::new()
    }

    fn param_count(&self) -> ParamCount {
        ParamCount {
            total: self.declared_params,
            trainable: 0,
            frozen: self.declared_params,
        }
    }
}

/// A small stack of `conv 3x3 (same) -> relu` units. The first three units
/// use stride 2, the rest stride 1.
pub struct TinyBackbone<T: Element> {
    channels: usize,
    units: Vec<TinyUnit<T>>,
}

struct TinyUnit<T: Element> {
    conv: Conv2d<T>,
    relu: Relu<T>,
}

impl<T: Element> TinyBackbone<T> {
    pub const DOWNSAMPLING_UNITS: usize = 3;

    pub fn new(units: usize, channels: usize, seed: u64) -> Result<Self> {
        if units == 0 || channels == 0 {
            return Err(Error::Config(
                "tiny backbone needs at least one unit and one channel".into(),
            ));
        }
        let units = (0..units)
            .map(|u| {
                let cin = if u == 0 { 3 } else { channels };
                let s = if u < Self::DOWNSAMPLING_UNITS { 2 } else { 1 };
                Ok(TinyUnit {
                    conv: Conv2d::new(
                        (3, 3),
                        cin,
                        channels,
                        (s, s),
                        Padding::Same,
                        seed::derive(seed, &[u as u64]),
                    )?,
                    relu: Relu::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TinyBackbone { channels, units })
    }
}

impl<T: Element> Backbone<T> for TinyBackbone<T> {
    fn spec(&self) -> BackboneSpec {
        BackboneSpec::TinyTrainable {
            units: self.units.len(),
            channels: self.channels,
        }
    }

    fn output_name(&self) -> String {
        format!("unit_{}", self.units.len())
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.units
            .iter()
            .try_fold(input.to_vec(), |dims, u| u.conv.output_dims(&dims))
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for u in &mut self.units {
            h = u.conv.forward(&h, mode)?;
            h = u.relu.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for u in &self.units {
            h = u.relu.infer(&u.conv.infer(&h)?)?;
        }
        Ok(h)
    }

    fn backward(&mut self, d: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        let Some(lowest) = (0..self.units.len()).find(|&u| self.unit_trainable(u)) else {
            return Ok(None);
        };
        let mut g = d.clone();
        for u in self.units[lowest..].iter_mut().rev() {
            g = u.relu.backward(&g)?;
            g = u.conv.backward(&g)?;
        }
        Ok((lowest == 0).then_some(g))
    }

    fn unit_count(&self) -> usize {
        self.units.len()
    }

    fn unit_params(&self, unit: usize) -> ParamCount {
        self.units[unit].conv.param_count()
    }

    fn unit_trainable(&self, unit: usize) -> bool {
        self.units[unit].conv.params().iter().all(|p| p.trainable())
    }

    fn set_unit_trainable(&mut self, unit: usize, trainable: bool) {
        self.units[unit].conv.set_trainable(trainable);
    }

    fn params(&self) -> Vec<&ParamSlot<T>> {
        self.units.iter().flat_map(|u| u.conv.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamSlot<T>> {
        self.units
            .iter_mut()
            .flat_map(|u| u.conv.params_mut().iter_mut())
            .collect()
    }

    fn named_params(&self) -> Vec<(String, &ParamSlot<T>)> {
        self.units
            .iter()
            .enumerate()
            .flat_map(|(i, u)| u.conv.params().iter().map(move |p| (format!("unit_{}", i + 1), p)))
            .collect()
    }

    fn param_count(&self) -> ParamCount {
        self.units.iter().map(|u| u.conv.param_count()).sum()
    }
}
