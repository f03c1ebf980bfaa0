//! Dense tensors, a fixed set of layers with hand-written backward passes, Adam,
//! finite-difference gradient checking and the tensor container format.

mod container;
mod gradcheck;
pub mod layers;
mod params;
mod tensor;

pub use container::{Container, MAGIC};
pub use gradcheck::{grad_check, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use layers::{
    affine, affine_backward, broadcast_add, broadcast_add_backward, log_softmax, log_softmax_backward, log_softmax_row, logaddexp, logsumexp,
    recurrent_step, recurrent_step_backward, sigmoid, sigmoid_backward, tanh, tanh_backward,
};
pub use params::{adam_step, adam_step_filtered, OptimConfig, Param, ParamStore};
pub use tensor::Tensor;
