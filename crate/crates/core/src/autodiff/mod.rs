//! Minimal n-dimensional tensor arithmetic with reverse-mode differentiation.
//!
//! The engine is define-by-run: every forward op is recorded on a [`Tape`],
//! and [`Tape::backward`] replays the records in reverse to accumulate
//! gradients. Tensors are generic over the element type so that training can
//! run in `f32` while finite-difference gradient checks run in `f64`.

pub mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use tape::{GradMap, Tape, Var};
pub use tensor::{Scalar, Tensor};
