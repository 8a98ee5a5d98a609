//! Minimal CNN engine: tensors, sequential layers with hand-written
//! backward passes, SGD with momentum and checkpoint I/O.

mod checkpoint;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, checkpoint_from_bytes, checkpoint_to_bytes, CheckpointError};
pub use layer::LayerSpec;
pub use loss::{cross_entropy, softmax, softmax_rows};
pub use network::{
    build_mini_two_stream, Activation, ForwardCache, Gradients, Mode, Network, PRELU_INIT_SLOPE,
};
pub use optim::{sgd_step, LrSchedule, OptimState};
pub use tensor::{Scalar, Tensor};

pub(crate) use network::init_layer;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch at {layer}: {reason}")]
    Shape { layer: String, reason: String },
    #[error("input {input_hw}px is below the minimum of {min}px")]
    InputTooSmall { input_hw: usize, min: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("non-finite logit at index {index}")]
    NonFinite { index: usize },
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid learning-rate schedule: {0}")]
    Schedule(String),
}
