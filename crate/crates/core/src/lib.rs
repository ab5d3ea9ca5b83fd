//! Toy-scale multiple-choice video QA with a two-stage training scheme:
//! question-prediction pre-training, then QA training with temporal-span and
//! masked-anchor contrastive auxiliary losses, built on locally aligned
//! attention between per-segment frame features and hypothesis encodings.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (f32 or f64);
//! training runs at f32 while gradient checks run at f64.

pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod input;
pub mod metrics;
pub mod model;
pub mod graph;
pub mod pretrain;
pub mod train;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod vocab;

pub use error::{McvqaError, Result};
pub use graph::{Grads, Graph, NodeId};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Concrete aliases for the two precisions in use.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
