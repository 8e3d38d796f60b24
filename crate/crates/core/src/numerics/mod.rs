//! Dense math kernel: tensors, forward kernels, the gradient tape, the
//! parameter store with Adam, and the finite-difference checker.

pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use ops::{gru_cell, layer_norm, scaled_dot_attention, softmax_over_slots, GruParams};
pub use params::{adam_step, AdamConfig, Grads, ParamStore, StepStatus};
pub use tape::{Tape, Var};
pub use tensor::Tensor2D;
