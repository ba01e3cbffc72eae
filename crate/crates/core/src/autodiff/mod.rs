//! Minimal reverse-mode automatic differentiation engine.
//!
//! Everything the acoustic model needs and nothing more: dense arrays, a
//! define-by-run tape with batched matmul/conv1d/attention primitives, the
//! gradient reversal operator, and a finite-difference checker.

mod array;
mod check;
mod graph;

pub use array::{Array, Real};
pub use check::{grad_check, DEFAULT_EPS, GRAD_TOL};
pub use graph::{Graph, Tensor, ATTN_MASK_VALUE, LAYER_NORM_EPS};
