//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values live in row-major `Vec`s; image tensors use the NCHW layout.
//! A [`Graph`] records every operation applied to its [`Var`]s and
//! [`Graph::backward`] walks the tape in reverse to accumulate gradients.
//! Everything is generic over [`Real`] so the same network code runs in
//! `f32` for training and `f64` for finite-difference checks.

mod conv;
mod error;
pub mod gradcheck;
mod graph;
mod real;
mod tensor;

pub use error::ShapeError;
pub use graph::{Gradients, Graph, Var};
pub use real::Real;
pub use tensor::Tensor;

pub type Result<T, E = ShapeError> = std::result::Result<T, E>;
