//! Graph construction from measured distances.
//!
//! Hard mode thresholds the distance matrix once and yields a symmetric,
//! self-looped adjacency with its normalized form `D^-1/2 A D^-1/2`. Soft
//! mode builds per-edge weights `ReLU(-tanh(gamma (x_ij - t_i)))` inside the
//! autodiff graph so thresholds receive gradients.

use std::fmt::Write as _;
use std::rc::Rc;

use ndarray::Array2;
use thiserror::Error;

use crate::num::{Graph, NumError, Pattern, Var};
use crate::scenario::MeasurementMatrix;

/// Density at or above which operators are realized densely.
pub const DENSE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid threshold {0}: must be finite and >= 0")]
    Threshold(f64),
    #[error("zero degree at node {0}")]
    ZeroDegree(usize),
    #[error("invalid soft-threshold parameters: {0}")]
    SoftParams(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Linear operator realized densely or over a sparsity pattern.
#[derive(Clone, Debug)]
pub enum Operator {
    Sparse { pattern: Rc<Pattern>, values: Vec<f64> },
    Dense(Array2<f64>),
}

impl Operator {
    /// Chooses the realization from the pattern density.
    pub fn new(pattern: Rc<Pattern>, values: Vec<f64>) -> Self {
        if pattern.density() >= DENSE_THRESHOLD {
            Operator::Dense(pattern.scatter(&values))
        } else {
            Operator::Sparse { pattern, values }
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Operator::Dense(_))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            Operator::Sparse { pattern, values } => pattern.scatter(values),
            Operator::Dense(m) => m.clone(),
        }
    }

    /// `self * rhs` outside the autodiff graph.
    pub fn apply(&self, rhs: &Array2<f64>) -> Result<Array2<f64>, NumError> {
        match self {
            Operator::Sparse { pattern, values } => crate::num::sparse::spmm(pattern, values, rhs),
            Operator::Dense(m) => {
                if m.ncols() != rhs.nrows() {
                    return Err(NumError::Shape { op: "operator", lhs: m.dim(), rhs: rhs.dim() });
                }
                Ok(m.dot(rhs))
            }
        }
    }

    /// `self * rhs` recorded on `g` (the operator itself is constant).
    pub fn apply_var(&self, g: &mut Graph, rhs: Var) -> Result<Var, NumError> {
        match self {
            Operator::Sparse { pattern, values } => {
                let v = g.column(values.clone());
                g.spmm(pattern, v, rhs)
            }
            Operator::Dense(m) => {
                let c = g.constant(m.clone());
                g.matmul(c, rhs)
            }
        }
    }
}

/// Hard-thresholded graph. All edge-valued vectors follow `pattern`.
#[derive(Clone, Debug)]
pub struct GraphStructure {
    pub pattern: Rc<Pattern>,
    /// `a_ij` per stored edge.
    pub adjacency: Vec<f64>,
    pub degree: Vec<f64>,
    /// `a_ij / sqrt(d_i d_j)` per stored edge.
    pub norm_adjacency: Vec<f64>,
    /// `a_ij x_ij` per stored edge.
    pub masked_distances: Vec<f64>,
    /// Nodes whose only edge is the self-loop.
    pub isolated: Vec<usize>,
}

impl GraphStructure {
    pub fn n(&self) -> usize {
        self.pattern.nrows()
    }

    /// Number of stored edges, self-loops included.
    pub fn n_edges(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn adjacency_dense(&self) -> Array2<f64> {
        self.pattern.scatter(&self.adjacency)
    }

    pub fn norm_adjacency_dense(&self) -> Array2<f64> {
        self.pattern.scatter(&self.norm_adjacency)
    }

    pub fn masked_distances_dense(&self) -> Array2<f64> {
        self.pattern.scatter(&self.masked_distances)
    }

    /// `A_hat` as an operator.
    pub fn norm_operator(&self) -> Operator {
        Operator::new(self.pattern.clone(), self.norm_adjacency.clone())
    }

    /// `X_hat` as an operator.
    pub fn masked_operator(&self) -> Operator {
        Operator::new(self.pattern.clone(), self.masked_distances.clone())
    }

    /// Edge list CSV `i,j,weight` of the adjacency.
    pub fn edges_csv(&self) -> String {
        edges_csv(&self.pattern, &self.adjacency)
    }
}

/// Edge list CSV `i,j,weight` for any edge-valued vector.
pub fn edges_csv(pattern: &Pattern, weights: &[f64]) -> String {
    let mut out = String::from("i,j,weight\n");
    for (k, i, j) in pattern.iter() {
        let _ = writeln!(out, "{i},{j},{}", weights[k]);
    }
    out
}

/// Pairwise summation; the result does not depend on thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1..=8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// `a_ij = 1` iff `x_ij <= t_h`. The diagonal is always kept.
pub fn hard_threshold(x: &MeasurementMatrix, t_h: f64) -> Result<GraphStructure, GraphError> {
    if !(t_h >= 0.0 && t_h.is_finite()) {
        return Err(GraphError::Threshold(t_h));
    }
    let n = x.n();
    let pattern = Rc::new(Pattern::from_predicate(n, n, |i, j| i == j || x.x[[i, j]] <= t_h));
    let adjacency = vec![1.0; pattern.nnz()];
    let masked_distances = pattern.gather(&x.x);
    let (degree, norm_adjacency) = normalize_edges(&pattern, &adjacency)?;
    let isolated = (0..n).filter(|&i| pattern.row(i).len() == 1).collect();
    Ok(GraphStructure { pattern, adjacency, degree, norm_adjacency, masked_distances, isolated })
}

/// Row degrees and `a_ij / sqrt(d_i d_j)` over a pattern.
pub fn normalize_edges(pattern: &Pattern, a: &[f64]) -> Result<(Vec<f64>, Vec<f64>), GraphError> {
    let degree: Vec<f64> = (0..pattern.nrows()).map(|i| pairwise_sum(&a[pattern.row_range(i)])).collect();
    if let Some(i) = degree.iter().position(|&d| !(d > 0.0)) {
        return Err(GraphError::ZeroDegree(i));
    }
    let inv: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let norm = pattern.iter().map(|(k, i, j)| a[k] * inv[i] * inv[j]).collect();
    Ok((degree, norm))
}

/// Dense `D^-1/2 A D^-1/2` for given degrees.
pub fn normalize_adjacency(a: &Array2<f64>, d: &[f64]) -> Result<Array2<f64>, GraphError> {
    let (n, m) = a.dim();
    if n != m || d.len() != n {
        return Err(NumError::Shape { op: "normalize_adjacency", lhs: (n, m), rhs: (d.len(), 1) }.into());
    }
    if let Some(i) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(GraphError::ZeroDegree(i));
    }
    let inv: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| a[[i, j]] * inv[i] * inv[j]))
}

/// Row sums of a dense adjacency.
pub fn degrees(a: &Array2<f64>) -> Vec<f64> {
    a.outer_iter().map(|r| pairwise_sum(&r.to_vec())).collect()
}

/// Smooth step `max(0, tanh(gamma v))`.
pub fn approx_step(v: f64, gamma: f64) -> f64 {
    (gamma * v).tanh().max(0.0)
}

/// Learnable per-node thresholds `t_hat = l_max * sigmoid(t_raw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftThresholdParams {
    pub t_raw: Vec<f64>,
    pub gamma: f64,
    pub l_max: f64,
}

impl SoftThresholdParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(GraphError::SoftParams(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.l_max > 0.0 && self.l_max.is_finite()) {
            return Err(GraphError::SoftParams(format!("l_max must be > 0, got {}", self.l_max)));
        }
        Ok(())
    }

    /// Rescaled thresholds.
    pub fn thresholds(&self) -> Vec<f64> {
        self.t_raw.iter().map(|&t| self.l_max / (1.0 + (-t).exp())).collect()
    }
}

/// Differentiable soft adjacency over a candidate pattern.
#[derive(Clone, Debug)]
pub struct SoftGraph {
    pub pattern: Rc<Pattern>,
    /// `nnz x 1` measured distances (constant).
    pub x: Var,
    /// `nnz x 1` soft weights `a_ij`.
    pub a: Var,
    /// `nnz x 1` masked distances `a_ij x_ij`.
    pub x_hat: Var,
}

impl SoftGraph {
    /// Fine pattern: edges with positive weight, plus every self-loop. Also
    /// returns the positions of the kept edges in the candidate pattern.
    pub fn fine(&self, g: &Graph) -> (Rc<Pattern>, Rc<Vec<usize>>) {
        let a = g.value(self.a);
        let keep: Vec<bool> = self.pattern.iter().map(|(k, i, j)| i == j || a[[k, 0]] > 0.0).collect();
        let (p, map) = self.pattern.filter(&keep);
        (Rc::new(p), Rc::new(map))
    }

    pub fn adjacency_dense(&self, g: &Graph) -> Array2<f64> {
        self.pattern.scatter(g.value(self.a).as_slice().expect("column"))
    }

    pub fn masked_distances_dense(&self, g: &Graph) -> Array2<f64> {
        self.pattern.scatter(g.value(self.x_hat).as_slice().expect("column"))
    }
}

/// Candidate pattern for ALM-I: entries that can ever pass a threshold
/// bounded by `l_max`, plus the diagonal.
pub fn candidate_pattern(x: &MeasurementMatrix, l_max: f64) -> Pattern {
    let n = x.n();
    Pattern::from_predicate(n, n, |i, j| i == j || x.x[[i, j]] < l_max)
}

/// Soft weights from per-edge thresholds: `a = ReLU(-tanh(gamma (x - t)))`.
pub fn soft_edges(
    g: &mut Graph,
    pattern: &Rc<Pattern>,
    x: Var,
    t_edges: Var,
    gamma: f64,
) -> Result<SoftGraph, NumError> {
    let diff = g.sub(t_edges, x)?;
    let scaled = g.scale(diff, gamma);
    let th = g.tanh(scaled);
    let a = g.relu(th);
    let x_hat = g.hadamard(a, x)?;
    Ok(SoftGraph { pattern: pattern.clone(), x, a, x_hat })
}

/// Measured distances on a pattern as an `nnz x 1` constant.
pub fn edge_distances(g: &mut Graph, pattern: &Pattern, x: &MeasurementMatrix) -> Var {
    g.column(pattern.gather(&x.x))
}

/// Per-node soft thresholds. `t_raw` is an `N x 1` node of `g`; returns the
/// soft graph and the rescaled thresholds node.
pub fn soft_threshold(
    g: &mut Graph,
    pattern: &Rc<Pattern>,
    x: &MeasurementMatrix,
    t_raw: Var,
    gamma: f64,
    l_max: f64,
) -> Result<(SoftGraph, Var), GraphError> {
    soft_threshold_edges(g, pattern, &pattern.gather(&x.x), t_raw, gamma, l_max)
}

/// [`soft_threshold`] with the measured distances already gathered onto
/// `pattern`.
pub fn soft_threshold_edges(
    g: &mut Graph,
    pattern: &Rc<Pattern>,
    x_edges: &[f64],
    t_raw: Var,
    gamma: f64,
    l_max: f64,
) -> Result<(SoftGraph, Var), GraphError> {
    let params = SoftThresholdParams { t_raw: Vec::new(), gamma, l_max };
    params.validate()?;
    if x_edges.len() != pattern.nnz() {
        return Err(NumError::Shape { op: "soft_threshold", lhs: (x_edges.len(), 1), rhs: (pattern.nnz(), 1) }.into());
    }
    let s = g.sigmoid(t_raw);
    let t_hat = g.scale(s, l_max);
    let t_edges = g.edge_row_broadcast(t_hat, pattern)?;
    let xe = g.column(x_edges.to_vec());
    Ok((soft_edges(g, pattern, xe, t_edges, gamma)?, t_hat))
}
