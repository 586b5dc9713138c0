//! Dynamic normalization on a small CPU deep-learning stack.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors, seeded RNG and the text dump format.
//! - [`autodiff`]: the [`autodiff::Ops`] graph abstraction with an eager
//!   evaluator and a reverse-mode [`autodiff::Tape`], plus finite-difference
//!   gradient checking.
//! - [`layers`]: convolution, (grouped) fully connected layers, activations,
//!   pooling and the classification loss.
//! - [`norm`]: BatchNorm, SE, the SC-Module and the dynamic normalization
//!   layers DN-B / DN-C.
//! - [`zoo`]: declarative model specs, the toy CNN, network instantiation and
//!   the analytic cost model.
//! - [`data`]: CIFAR-10 binary loader, synthetic blobs and the batcher.
//! - [`train`]: SGD, learning-rate schedules and the training loop.
//! - [`cli`]: the `dynorm` command-line tool.

pub mod autodiff;
pub mod cli;
pub mod data;
mod error;
pub mod layers;
pub mod norm;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Rng, Shape, Tensor};
