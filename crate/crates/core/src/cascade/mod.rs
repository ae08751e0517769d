//! Cascaded CNN reconstruction: tensors, 3D convolutions, the unrolled
//! model with data-consistency layers, hand-rolled reverse-mode gradients,
//! Adam, and the training loop.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::{AdamParams, AdamState};
pub use conv::ConvLayer;
pub use gradcheck::{grad_check, GradCheckReport, GradCheckSample};
pub use model::{
    cascade_backward, cascade_forward, cascade_forward_tape, load_model, save_model,
    CascadeConfig, CascadeModel, Gradients, Tape,
};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainLogEntry};
