//! A small neural-network engine: dense and 1-D convolution layers, exact
//! reverse-mode gradients, SGD/Adam, and a compact checksummed file format.
//!
//! Tensors are flat `f64` slices. Convolution activations are laid out
//! channel-major (`[channel][position]`), so flattening into a following
//! dense layer is the identity on memory.

mod format;
mod infer;
mod layer;
mod loss;
mod model;
mod optim;
mod train;

pub use format::{load_model, save_model, LoadError, FORMAT_VERSION, MAGIC};
pub use layer::{activation_apply, activation_derivative, Activation, LayerSpec, TensorShape};
pub use loss::{loss_eval, loss_gradient, Loss, BCE_CLAMP};
pub use model::{Gradients, Layer, Model};
pub use optim::{CheckpointMetric, OptimizerKind, OptimizerState, TrainConfig};
pub use train::{fit, Example, TrainReport};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error at layer {layer}: expected {expected} values, got {got}")]
    Shape {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("layers {0} and {1} do not compose")]
    Incompatible(usize, usize),
    #[error("invalid layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyData,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },
}
