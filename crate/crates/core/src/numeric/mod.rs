//! Dense tensors, a reverse-mode tape for the handful of operations the
//! model needs, Adam, and a finite-difference gradient checker.

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub(crate) use tape::{sigmoid_scalar, softmax_rows, topk_indices};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
