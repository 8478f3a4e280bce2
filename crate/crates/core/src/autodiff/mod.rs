//! Reverse-mode automatic differentiation over dense `f64` tensors.

pub mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
