//! The classification head over a pluggable backbone.
//!
//! The head is the fixed sequence
//!
//! ```text
//! conv 3x3/32 same -> batchnorm -> relu -> maxpool 2x2
//! conv 3x3/64 same -> batchnorm -> relu -> maxpool 2x2
//! flatten -> dense 32 -> batchnorm -> relu -> dropout
//! dense K -> batchnorm -> softmax
//! ```
//!
//! sixteen layers in all. A one-block variant (dropping the second conv
//! block) is available for the experiment presets.

mod backbone;
mod checkpoint;
mod summary;

pub use backbone::{
    inception_output_side, Backbone, BackboneSpec, ShapeOnlyBackbone, TinyBackbone, INCEPTION_V3_PARAMS,
    MIXED10_CHANNELS,
};
pub use checkpoint::{
    load, read_manifest, save, CheckpointMeta, Manifest, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use summary::{Summary, SummaryRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, LayerKind, MaxPool2d, Mode, ParamCount, ParamSlot, Relu, Softmax,
};
use crate::seed;
use crate::tensor::{Element, Padding, Tensor};

pub const DEFAULT_CLASSES: usize = 7;
pub const DEFAULT_IMAGE_SIDE: usize = 363;
pub const HEAD_FILTERS: [usize; 2] = [32, 64];
pub const HEAD_DENSE_UNITS: usize = 32;

/// Everything needed to rebuild a model's structure; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub classes: usize,
    pub image_side: usize,
    pub dropout_rate: f64,
    pub conv_blocks: usize,
    pub backbone: BackboneSpec,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            classes: DEFAULT_CLASSES,
            image_side: DEFAULT_IMAGE_SIDE,
            dropout_rate: crate::layers::DEFAULT_DROPOUT_RATE,
            conv_blocks: 2,
            backbone: BackboneSpec::default(),
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn build<T: Element>(&self) -> Result<ModelGraph<T>> {
        let backbone = self.backbone.build(seed::derive(self.seed, &[1]))?;
        ModelGraph::build(self, backbone)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainablePolicy {
    FreezeBackboneAll,
    /// Unfreeze the `k` backbone units nearest the output.
    UnfreezeBackboneTop(usize),
    /// Unfreeze exactly the listed backbone units (0 = bottom).
    Units(Vec<usize>),
}

pub struct HeadLayer<T: Element> {
    pub name: String,
    pub layer: Box<dyn Layer<T>>,
}

pub struct ModelGraph<T: Element> {
    spec: ModelSpec,
    backbone: Box<dyn Backbone<T>>,
    head: Vec<HeadLayer<T>>,
    mode: Mode,
}

impl<T: Element> ModelGraph<T> {
    pub fn build(spec: &ModelSpec, backbone: Box<dyn Backbone<T>>) -> Result<Self> {
        if spec.classes < 2 {
            return Err(Error::Build(format!("need at least 2 classes, got {}", spec.classes)));
        }
        if !(1..=2).contains(&spec.conv_blocks) {
            return Err(Error::Build(format!(
                "conv_blocks must be 1 or 2, got {}",
                spec.conv_blocks
            )));
        }
        if backbone.spec() != spec.backbone {
            return Err(Error::Build("backbone does not match the model spec".into()));
        }
        let side = spec.image_side;
        let feat = backbone
            .output_dims(&[1, side, side, 3])
            .map_err(|e| Error::Build(format!("backbone rejects {side}x{side} input: {e}")))?;
        let mut counter = NameCounter::default();
        let mut head: Vec<HeadLayer<T>> = Vec::new();
        let layer_seed = |i: usize| seed::derive(spec.seed, &[2, i as u64]);
        let mut push = |head: &mut Vec<HeadLayer<T>>, prefix: &str, layer: Box<dyn Layer<T>>| {
            head.push(HeadLayer {
                name: counter.next(prefix),
                layer,
            });
        };

        let mut channels = feat[3];
        for &filters in &HEAD_FILTERS[..spec.conv_blocks] {
            let i = head.len();
            push(
                &mut head,
                "conv2d",
                Box::new(Conv2d::new(
                    (3, 3),
                    channels,
                    filters,
                    (1, 1),
                    Padding::Same,
                    layer_seed(i),
                )?),
            );
            push(&mut head, "batch_normalization", Box::new(BatchNorm::new(filters)?));
            push(&mut head, "activation", Box::new(Relu::new()));
            push(&mut head, "max_pooling2d", Box::new(MaxPool2d::new((2, 2), (2, 2))?));
            channels = filters;
        }
        push(&mut head, "flatten", Box::new(Flatten::new()));
        let mut dims = feat.clone();
        for hl in &head {
            dims = hl
                .layer
                .output_dims(&dims)
                .map_err(|e| Error::Build(format!("{} cannot take the backbone output {feat:?}: {e}", hl.name)))?;
        }
        let flat = dims[1];
        let i = head.len();
        push(
            &mut head,
            "dense",
            Box::new(Dense::new(flat, HEAD_DENSE_UNITS, layer_seed(i))?),
        );
        push(
            &mut head,
            "batch_normalization",
            Box::new(BatchNorm::new(HEAD_DENSE_UNITS)?),
        );
        push(&mut head, "activation", Box::new(Relu::new()));
        let i = head.len();
        push(
            &mut head,
            "dropout",
            Box::new(Dropout::new(spec.dropout_rate, layer_seed(i))?),
        );
        let i = head.len();
        push(
            &mut head,
            "dense",
            Box::new(Dense::new(HEAD_DENSE_UNITS, spec.classes, layer_seed(i))?),
        );
        push(
            &mut head,
            "batch_normalization",
            Box::new(BatchNorm::new(spec.classes)?),
        );
        push(&mut head, "activation", Box::new(Softmax::new()));

        let mut model = ModelGraph {
            spec: spec.clone(),
            backbone,
            head,
            mode: Mode::Inference,
        };
        model.set_trainable(&TrainablePolicy::FreezeBackboneAll)?;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn backbone(&self) -> &dyn Backbone<T> {
        self.backbone.as_ref()
    }

    pub fn head(&self) -> &[HeadLayer<T>] {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut [HeadLayer<T>] {
        &mut self.head
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn input_dims(&self, batch: usize) -> [usize; 4] {
        [batch, self.spec.image_side, self.spec.image_side, 3]
    }

    fn check_input(&self, images: &Tensor<T>) -> Result<()> {
        let d = images.dims();
        if d.len() != 4 || d[1..] != self.input_dims(1)[1..] {
            return Err(Error::Shape(format!(
                "model expects (N, {s}, {s}, 3) images, got {d:?}",
                s = self.spec.image_side
            )));
        }
        Ok(())
    }

    /// Forward pass in the current mode, caching for [`ModelGraph::backward`].
    pub fn forward(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(images)?;
        let mode = self.mode;
        let mut h = self.backbone.forward(images, mode)?;
        for hl in &mut self.head {
            h = hl.layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Head-only forward from precomputed backbone features.
    pub fn forward_head(&mut self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let mode = self.mode;
        let mut h = features.clone();
        for hl in &mut self.head {
            h = hl.layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Side-effect-free inference; safe to call from several threads.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(images)?;
        let mut h = self.backbone.infer(images)?;
        for hl in &self.head {
            h = hl.layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Backpropagates `d_probs` through the head and any unfrozen backbone
    /// units. Returns the feature gradient at the backbone output.
    pub fn backward(&mut self, d_probs: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = d_probs.clone();
        for hl in self.head.iter_mut().rev() {
            g = hl.layer.backward(&g)?;
        }
        if self.backbone.any_trainable() {
            self.backbone.backward(&g)?;
        }
        Ok(g)
    }

    pub fn set_trainable(&mut self, policy: &TrainablePolicy) -> Result<()> {
        let n = self.backbone.unit_count();
        let unfrozen: Vec<usize> = match policy {
            TrainablePolicy::FreezeBackboneAll => Vec::new(),
            TrainablePolicy::UnfreezeBackboneTop(k) => {
                if *k > n {
                    return Err(Error::Config(format!(
                        "cannot unfreeze top {k} units of a backbone with {n} freezable units"
                    )));
                }
                (n - k..n).collect()
            }
            TrainablePolicy::Units(list) => {
                if let Some(&bad) = list.iter().find(|&&u| u >= n) {
                    return Err(Error::Config(format!("backbone unit {bad} out of range (have {n})")));
                }
                list.clone()
            }
        };
        for u in 0..n {
            self.backbone.set_unit_trainable(u, unfrozen.contains(&u));
        }
        for hl in &mut self.head {
            hl.layer.set_trainable(true);
        }
        Ok(())
    }

    /// All materialized slots: backbone units bottom-up, then the head in order.
    pub fn params(&self) -> Vec<&ParamSlot<T>> {
        let mut v = self.backbone.params();
        for hl in &self.head {
            v.extend(hl.layer.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamSlot<T>> {
        let mut v = self.backbone.params_mut();
        for hl in &mut self.head {
            v.extend(hl.layer.params_mut().iter_mut());
        }
        v
    }

    /// `(layer name, kind, slot)` for every materialized slot, in [`ModelGraph::params`] order.
    pub fn named_params(&self) -> Vec<(String, Option<LayerKind>, &ParamSlot<T>)> {
        let mut v: Vec<_> = self
            .backbone
            .named_params()
            .into_iter()
            .map(|(n, p)| (format!("backbone/{n}"), Some(LayerKind::Conv2d), p))
            .collect();
        for hl in &self.head {
            let kind = hl.layer.kind();
            v.extend(hl.layer.params().iter().map(|p| (hl.name.clone(), Some(kind), p)));
        }
        v
    }

    pub fn param_count(&self) -> ParamCount {
        self.backbone.param_count() + self.head.iter().map(|h| h.layer.param_count()).sum()
    }

    pub fn head_param_count(&self) -> ParamCount {
        self.head.iter().map(|h| h.layer.param_count()).sum()
    }

    pub fn summary(&self) -> Result<Summary> {
        Summary::of(self)
    }

    /// Resets every dropout layer's mask counter.
    pub fn set_dropout_step(&mut self, step: u64) {
        for hl in &mut self.head {
            hl.layer.set_dropout_step(step);
        }
    }
}

#[derive(Default)]
struct NameCounter {
    seen: std::collections::HashMap<String, usize>,
}

impl NameCounter {
    fn next(&mut self, prefix: &str) -> String {
        let n = self.seen.entry(prefix.to_string()).or_insert(0);
        *n += 1;
        format!("{prefix}_{n}")
    }
}
