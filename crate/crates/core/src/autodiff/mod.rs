//! Dense tensors with a recorded operation tape for reverse-mode gradients.

mod check;
mod tape;
mod tensor;

pub use check::{finite_difference_check, relative_error, REL_ERROR_FLOOR};
pub use tape::{dropout_mask, sigmoid, Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
