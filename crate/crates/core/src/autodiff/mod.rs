//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Graph`] as they run; [`Graph::backward`]
//! walks the tape once in reverse and sums gradients over fan-out.

mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
