//! Numerical engine, graph builder, trainer and imaging utilities for recursively branched
//! deconvolutional networks (RBDN).

// NaN-rejecting range checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod fsutil;
pub mod graph;
pub mod imaging;
pub mod layers;
pub mod tensor;
pub mod train;

pub use layers::{LayerError, Mode};
pub use tensor::{DType, Real, Tensor, TensorError};
