//! Disentangling phantom images into an anatomy code and a contrast code.
//!
//! Everything numeric is generic over [`Scalar`] (f32 or f64): training runs
//! in f32, gradient checks and metric oracles run in f64. The concrete
//! aliases below are the types the CLI and the evaluation suite use.

pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod mi;
pub mod nets;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod translate;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Element type used for training and inference.
pub type TrainFloat = f32;
/// Element type used for gradient checks and metric oracles.
pub type CheckFloat = f64;

pub type TensorF = tensor::Tensor<TrainFloat>;
pub type TensorD = tensor::Tensor<CheckFloat>;
pub type GraphF = graph::Graph<TrainFloat>;
pub type GraphD = graph::Graph<CheckFloat>;
