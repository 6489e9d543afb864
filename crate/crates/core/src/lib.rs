//! In-context operator learning: ground-truth solvers for ODE, PDE and
//! mean-field control families, the key-value prompt encoding, an
//! encoder-decoder transformer with hand-written backpropagation, training
//! and the evaluation protocols.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod mfc;
pub mod model;
pub mod prompt;
pub mod scalar;
pub mod solvers;
pub mod stochastic;
pub mod trainer;

pub use error::{IconError, Result};
pub use scalar::Scalar;

pub type IconModel32 = model::IconModel<f32>;
pub type IconModel64 = model::IconModel<f64>;
pub type Checkpoint32 = model::Checkpoint<f32>;
pub type Checkpoint64 = model::Checkpoint<f64>;
pub type Batch32 = prompt::Batch<f32>;
pub type Batch64 = prompt::Batch<f64>;
pub type PromptMatrix32 = prompt::PromptMatrix<f32>;
pub type PromptMatrix64 = prompt::PromptMatrix<f64>;
