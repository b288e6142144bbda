//! A small deep-learning library for object-state classification: tensors,
//! layers with hand-written gradients, optimizers, a classifier head over a
//! pluggable backbone, an image pipeline and a two-stage training protocol.

pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use tensor::{Element, Precision, Shape, Tensor};
