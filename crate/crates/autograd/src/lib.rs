//! Dense rank-2 tensors with a tape-based reverse-mode autodiff.
//!
//! Everything is row-major. Graph operations work on matrices; vectors are
//! `1×n` rows. The element type is generic so the same model code runs in
//! `f32` for training and `f64` for finite-difference checks.

mod error;
pub mod gradcheck;
mod graph;
mod lstm;
mod real;
mod tensor;

pub use error::TensorError;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use real::{gemm, sigmoid, tanh, Real};
pub use tensor::Tensor;
