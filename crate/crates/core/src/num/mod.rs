//! Numerical core: sparse storage, the autodiff graph, optimizers,
//! symmetric eigendecomposition and parameter checkpoints.

pub mod checkpoint;
pub mod eig;
pub mod graph;
pub mod optim;
pub mod sparse;

use thiserror::Error;

pub use graph::{Graph, Tensor, Var};
pub use sparse::{Csr, Pattern};

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("index {index} out of range for length {len} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward through non-differentiable op {0}")]
    NonDifferentiable(&'static str),
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("matrix not symmetric: |m[{i},{j}] - m[{j},{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("{0}")]
    Invalid(String),
}
