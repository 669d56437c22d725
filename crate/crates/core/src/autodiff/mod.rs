//! Dense tensor primitives with reverse-mode differentiation.

pub mod gradcheck;
mod graph;
pub mod kernels;

pub use graph::{BatchStats, Gradients, Graph, ScalarFn, Var};
