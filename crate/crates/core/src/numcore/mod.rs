//! Dense tensors, reverse-mode differentiation and gradient checking.

pub mod gradcheck;
mod kernels;
pub mod linalg;
pub mod nn;
pub mod tape;
pub mod tensor;

pub use gradcheck::{gradcheck, gradcheck_with, GradcheckOptions, GradcheckReport};
pub use nn::{BoundParams, Init, ParamStore};
pub use tape::{Gradients, Tape, Var, GATHER_ZERO};
pub use tensor::Tensor;
