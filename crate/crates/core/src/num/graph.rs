//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Every operation on a [`Graph`] evaluates eagerly and appends a node that
//! remembers its inputs. [`Graph::backward`] walks the nodes in reverse
//! insertion order, which is a reverse topological order because a node can
//! only reference nodes created before it.
//!
//! All values are `rows x cols` matrices of `f64`. Scalars are `1 x 1`.
//! Edge-valued quantities (one number per stored entry of a sparse
//! [`Pattern`]) are `nnz x 1` columns.
//!
//! Leaf gradients accumulate across calls to `backward` until
//! [`Graph::zero_grad`] is called. Intermediate gradients do not persist.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::sparse::{column_blocks, spmm, Pattern};
use super::NumError;

pub type Tensor = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM { pattern: Rc<Pattern>, values: Var, rhs: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Gather(Var, Rc<Vec<usize>>),
    Abs(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    RowSoftmax(Var),
    RowMax(Var, Vec<usize>),
    Transpose(Var),
    FrobeniusSq(Var),
    Sum(Var),
    Dropout(Var, Rc<Tensor>),
    EdgeRowBroadcast(Var, Rc<Pattern>),
    EdgeScatter(Var, Rc<Pattern>),
    EdgeSoftmax(Var, Rc<Pattern>),
    EdgePairScore { p: Var, q: Var, v: Var, pattern: Rc<Pattern>, slope: f64 },
    EdgeAbsDiffScore { c: Var, v: Var, pattern: Rc<Pattern> },
    HardStep,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMM { .. } => "spmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::AddCol(..) => "add_col",
            Op::MulCol(..) => "mul_col",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::Gather(..) => "gather",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::RowSoftmax(..) => "row_softmax",
            Op::RowMax(..) => "row_max",
            Op::Transpose(..) => "transpose",
            Op::FrobeniusSq(..) => "frobenius_sq",
            Op::Sum(..) => "sum",
            Op::Dropout(..) => "dropout",
            Op::EdgeRowBroadcast(..) => "edge_row_broadcast",
            Op::EdgeScatter(..) => "edge_scatter",
            Op::EdgeSoftmax(..) => "edge_softmax",
            Op::EdgePairScore { .. } => "edge_pair_score",
            Op::EdgeAbsDiffScore { .. } => "edge_abs_diff_score",
            Op::HardStep => "hard_step",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation graph. Single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `1 x 1` constant.
    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// `n x 1` constant column.
    pub fn column(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.constant(Array2::from_shape_vec((n, 1), values).expect("column shape"))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Accumulated gradient of a leaf created with [`Graph::param`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).mapv(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::Shape { op, lhs: self.shape(a), rhs: self.shape(b) });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(NumError::Shape { op: "matmul", lhs: sa, rhs: sb });
        }
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Sparse (pattern + `nnz x 1` values) times dense.
    pub fn spmm(&mut self, pattern: &Rc<Pattern>, values: Var, rhs: Var) -> Result<Var, NumError> {
        if self.shape(values) != (pattern.nnz(), 1) {
            return Err(NumError::Shape {
                op: "spmm",
                lhs: self.shape(values),
                rhs: (pattern.nnz(), 1),
            });
        }
        let vals = self.value(values).as_slice().expect("column").to_vec();
        let value = spmm(pattern, &vals, self.value(rhs))?;
        let rg = self.rg(values) || self.rg(rhs);
        Ok(self.push(value, Op::SpMM { pattern: pattern.clone(), values, rhs }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape("hadamard", a, b)?;
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| s * x)
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    /// `a[i, j] + col[i]` for an `n x m` matrix and an `n x 1` column.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var, NumError> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(NumError::Shape { op: "add_col", lhs: sa, rhs: sc });
        }
        let value = self.value(a) + self.value(col);
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(value, Op::AddCol(a, col), rg))
    }

    /// `a[i, j] * col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumError> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(NumError::Shape { op: "mul_col", lhs: sa, rhs: sc });
        }
        let value = self.value(a) * self.value(col);
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(value, Op::MulCol(a, col), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = *parts.first().ok_or(NumError::Invalid("concat_cols: no inputs".into()))?;
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(NumError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first),
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = *parts.first().ok_or(NumError::Invalid("concat_rows: no inputs".into()))?;
        let cols = self.shape(first).1;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(NumError::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first),
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("checked shapes");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let n = self.shape(a).0;
        if start > end || end > n {
            return Err(NumError::Index { op: "slice_rows", index: end, len: n });
        }
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    /// Row gather: output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, a: Var, idx: &Rc<Vec<usize>>) -> Result<Var, NumError> {
        let (n, m) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(NumError::Index { op: "gather", index: bad, len: n });
        }
        let src = self.value(a);
        let mut value = Array2::zeros((idx.len(), m));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::Gather(a, idx.clone()), rg))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// `max(0, x)`; derivative 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| leaky(x, slope))
    }

    /// Row-wise softmax. Entries where `mask` is `false` get weight 0 and the
    /// remaining entries of the row are renormalized. A fully masked row is
    /// all zeros.
    pub fn row_softmax(&mut self, a: Var, mask: Option<Rc<Array2<bool>>>) -> Result<Var, NumError> {
        let sa = self.shape(a);
        if let Some(m) = &mask {
            if m.dim() != sa {
                return Err(NumError::Shape { op: "row_softmax", lhs: sa, rhs: m.dim() });
            }
        }
        let x = self.value(a);
        let mut value = Array2::zeros(sa);
        for i in 0..sa.0 {
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m[[i, j]]);
            let mx = (0..sa.1)
                .filter(|&j| keep(j))
                .map(|j| x[[i, j]])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in (0..sa.1).filter(|&j| keep(j)) {
                let e = (x[[i, j]] - mx).exp();
                value[[i, j]] = e;
                z += e;
            }
            value.row_mut(i).mapv_inplace(|e| e / z);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::RowSoftmax(a), rg))
    }

    /// Row maxima as an `n x 1` column; the gradient goes to the first
    /// maximizing entry.
    pub fn row_max(&mut self, a: Var) -> Result<Var, NumError> {
        let (n, m) = self.shape(a);
        if m == 0 {
            return Err(NumError::Invalid("row_max of a matrix with no columns".into()));
        }
        let x = self.value(a);
        let mut arg = Vec::with_capacity(n);
        let mut value = Array2::zeros((n, 1));
        for i in 0..n {
            let mut best = 0;
            for j in 1..m {
                if x[[i, j]] > x[[i, best]] {
                    best = j;
                }
            }
            arg.push(best);
            value[[i, 0]] = x[[i, best]];
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::RowMax(a, arg), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Squared Frobenius norm, `1 x 1`.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x * x).sum::<f64>();
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), s), Op::FrobeniusSq(a), rg)
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a), rg)
    }

    /// Multiplies by a precomputed mask whose survivors carry `1 / (1 - p)`.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Rc<Tensor>) -> Result<Var, NumError> {
        if mask.dim() != self.shape(a) {
            return Err(NumError::Shape { op: "dropout", lhs: self.shape(a), rhs: mask.dim() });
        }
        let value = self.value(a) * mask.as_ref();
        let rg = self.rg(a);
        Ok(self.push(value, Op::Dropout(a, mask), rg))
    }

    /// Zeroes each entry independently with probability `p`, scaling the
    /// survivors by `1 / (1 - p)`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl rand::Rng) -> Result<Var, NumError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::Invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - p);
        let mask = self.value(a).mapv(|_| if rng.random::<f64>() < p { 0.0 } else { keep });
        self.dropout_with_mask(a, Rc::new(mask))
    }

    /// Per-edge copy of an `n x 1` column: edge `(i, j)` gets `col[i]`.
    pub fn edge_row_broadcast(&mut self, col: Var, pattern: &Rc<Pattern>) -> Result<Var, NumError> {
        if self.shape(col) != (pattern.nrows(), 1) {
            return Err(NumError::Shape {
                op: "edge_row_broadcast",
                lhs: self.shape(col),
                rhs: (pattern.nrows(), 1),
            });
        }
        let c = self.value(col);
        let value = Array2::from_shape_fn((pattern.nnz(), 1), |(k, _)| c[[pattern.edge_rows()[k], 0]]);
        let rg = self.rg(col);
        Ok(self.push(value, Op::EdgeRowBroadcast(col, pattern.clone()), rg))
    }

    /// Dense matrix holding the edge values at their positions.
    pub fn edge_scatter(&mut self, values: Var, pattern: &Rc<Pattern>) -> Result<Var, NumError> {
        self.check_edges("edge_scatter", values, pattern)?;
        let value = pattern.scatter(self.value(values).as_slice().expect("column"));
        let rg = self.rg(values);
        Ok(self.push(value, Op::EdgeScatter(values, pattern.clone()), rg))
    }

    /// Softmax of edge scores over each row's stored entries.
    pub fn edge_softmax(&mut self, scores: Var, pattern: &Rc<Pattern>) -> Result<Var, NumError> {
        self.check_edges("edge_softmax", scores, pattern)?;
        let e = self.value(scores);
        let mut value = Array2::zeros((pattern.nnz(), 1));
        for i in 0..pattern.nrows() {
            let r = pattern.row_range(i);
            if r.is_empty() {
                continue;
            }
            let mx = r.clone().map(|k| e[[k, 0]]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in r.clone() {
                let w = (e[[k, 0]] - mx).exp();
                value[[k, 0]] = w;
                z += w;
            }
            for k in r {
                value[[k, 0]] /= z;
            }
        }
        let rg = self.rg(scores);
        Ok(self.push(value, Op::EdgeSoftmax(scores, pattern.clone()), rg))
    }

    /// Attention score per edge: `sum_f phi(p[i, f] + q[j, f]) * v[f]` with
    /// `phi` a leaky ReLU. Equivalent to `phi([a_i || b_j] W) v` when
    /// `p = A W_left` and `q = B W_right`.
    pub fn edge_pair_score(
        &mut self,
        p: Var,
        q: Var,
        v: Var,
        pattern: &Rc<Pattern>,
        slope: f64,
    ) -> Result<Var, NumError> {
        let (sp, sq, sv) = (self.shape(p), self.shape(q), self.shape(v));
        if sp.0 != pattern.nrows() || sq.0 != pattern.ncols() || sp.1 != sq.1 {
            return Err(NumError::Shape { op: "edge_pair_score", lhs: sp, rhs: sq });
        }
        if sv != (sp.1, 1) {
            return Err(NumError::Shape { op: "edge_pair_score", lhs: sp, rhs: sv });
        }
        let (pv, qv, vv) = (self.value(p), self.value(q), self.value(v));
        let vcol = vv.column(0);
        let mut value = Array2::zeros((pattern.nnz(), 1));
        for (k, i, j) in pattern.iter() {
            let (pi, qj) = (pv.row(i), qv.row(j));
            let mut acc = 0.0;
            for f in 0..sp.1 {
                acc += leaky(pi[f] + qj[f], slope) * vcol[f];
            }
            value[[k, 0]] = acc;
        }
        let rg = self.rg(p) || self.rg(q) || self.rg(v);
        let op = Op::EdgePairScore { p, q, v, pattern: pattern.clone(), slope };
        Ok(self.push(value, op, rg))
    }

    /// Symmetric distance-style score per edge: `sum_f |c[i, f] - c[j, f]| * v[f]`.
    pub fn edge_abs_diff_score(&mut self, c: Var, v: Var, pattern: &Rc<Pattern>) -> Result<Var, NumError> {
        let (sc, sv) = (self.shape(c), self.shape(v));
        if sc.0 != pattern.nrows() || sc.0 != pattern.ncols() || sv != (sc.1, 1) {
            return Err(NumError::Shape { op: "edge_abs_diff_score", lhs: sc, rhs: sv });
        }
        let (cv, vv) = (self.value(c), self.value(v));
        let vcol = vv.column(0);
        let mut value = Array2::zeros((pattern.nnz(), 1));
        for (k, i, j) in pattern.iter() {
            let (ci, cj) = (cv.row(i), cv.row(j));
            let mut acc = 0.0;
            for f in 0..sc.1 {
                acc += (ci[f] - cj[f]).abs() * vcol[f];
            }
            value[[k, 0]] = acc;
        }
        let rg = self.rg(c) || self.rg(v);
        Ok(self.push(value, Op::EdgeAbsDiffScore { c, v, pattern: pattern.clone() }, rg))
    }

    /// Diagnostic step function `1[x <= 0]`. Not differentiable: a backward
    /// pass that needs a gradient through it fails.
    pub fn hard_step(&mut self, a: Var) -> Var {
        self.unary(a, Op::HardStep, |x| if x <= 0.0 { 1.0 } else { 0.0 })
    }

    fn check_edges(&self, op: &'static str, values: Var, pattern: &Pattern) -> Result<(), NumError> {
        if self.shape(values) != (pattern.nnz(), 1) {
            return Err(NumError::Shape { op, lhs: self.shape(values), rhs: (pattern.nnz(), 1) });
        }
        Ok(())
    }

    /// Reverse-mode pass from a `1 x 1` node. Leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumError> {
        if self.shape(loss) != (1, 1) {
            return Err(NumError::NotScalar(self.shape(loss)));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NumError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.dot(&self.value(*b).t());
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.value(*a).t().dot(g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SpMM { pattern, values, rhs } => {
                let r = self.value(*rhs);
                let d = r.ncols();
                let gs = g.as_standard_layout();
                let gsl = gs.as_slice().expect("standard");
                if self.rg(*values) {
                    let rs = r.as_standard_layout();
                    let rsl = rs.as_slice().expect("standard");
                    let mut gv = Array2::zeros((pattern.nnz(), 1));
                    for (k, i, j) in pattern.iter() {
                        let gi = &gsl[i * d..(i + 1) * d];
                        let rj = &rsl[j * d..(j + 1) * d];
                        gv[[k, 0]] = gi.iter().zip(rj).map(|(a, b)| a * b).sum();
                    }
                    self.accumulate(grads, *values, gv);
                }
                if self.rg(*rhs) {
                    let vals = self.value(*values);
                    let mut gr = Array2::<f64>::zeros(r.dim());
                    let grs = gr.as_slice_mut().expect("fresh");
                    for c in column_blocks(d) {
                        for (k, i, j) in pattern.iter() {
                            let v = vals[[k, 0]];
                            if v == 0.0 {
                                continue;
                            }
                            let gi = &gsl[i * d + c.start..i * d + c.end];
                            for (o, x) in grs[j * d + c.start..j * d + c.end].iter_mut().zip(gi) {
                                *o += v * x;
                            }
                        }
                    }
                    self.accumulate(grads, *rhs, gr);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g * *s),
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::AddCol(a, c) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*c) {
                    let gc = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *c, gc);
                }
            }
            Op::MulCol(a, c) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*c));
                }
                if self.rg(*c) {
                    let gc = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *c, gc);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::SliceRows(a, start) => {
                let mut ga = Array2::zeros(self.shape(*a));
                ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, ga);
            }
            Op::Gather(a, idx) => {
                let mut ga = Array2::<f64>::zeros(self.shape(*a));
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = ga.row_mut(i);
                    row += &g.row(r);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Abs(a) => {
                let ga = Zip::from(g).and(self.value(*a)).map_collect(|&g, &x| g * sign(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = Zip::from(g).and(out).map_collect(|&g, &y| g * (1.0 - y * y));
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = Zip::from(g).and(out).map_collect(|&g, &y| g * y * (1.0 - y));
                self.accumulate(grads, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let ga = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| g * leaky_grad(x, *slope));
                self.accumulate(grads, *a, ga);
            }
            Op::RowSoftmax(a) => {
                let mut ga = Array2::zeros(out.dim());
                for i in 0..out.nrows() {
                    let dot: f64 = out.row(i).iter().zip(g.row(i)).map(|(y, g)| y * g).sum();
                    for j in 0..out.ncols() {
                        ga[[i, j]] = out[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowMax(a, arg) => {
                let mut ga = Array2::zeros(self.shape(*a));
                for (i, &j) in arg.iter().enumerate() {
                    ga[[i, j]] = g[[i, 0]];
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::FrobeniusSq(a) => {
                let s = g[[0, 0]] * 2.0;
                self.accumulate(grads, *a, self.value(*a) * s);
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, Array2::from_elem(self.shape(*a), g[[0, 0]]));
            }
            Op::Dropout(a, mask) => self.accumulate(grads, *a, g * mask.as_ref()),
            Op::EdgeRowBroadcast(c, pattern) => {
                let mut gc = Array2::zeros((pattern.nrows(), 1));
                for (k, i, _) in pattern.iter() {
                    gc[[i, 0]] += g[[k, 0]];
                }
                self.accumulate(grads, *c, gc);
            }
            Op::EdgeScatter(v, pattern) => {
                let gv = Array2::from_shape_vec((pattern.nnz(), 1), pattern.gather(g)).expect("nnz");
                self.accumulate(grads, *v, gv);
            }
            Op::EdgeSoftmax(e, pattern) => {
                let mut ge = Array2::zeros((pattern.nnz(), 1));
                for i in 0..pattern.nrows() {
                    let r = pattern.row_range(i);
                    let dot: f64 = r.clone().map(|k| out[[k, 0]] * g[[k, 0]]).sum();
                    for k in r {
                        ge[[k, 0]] = out[[k, 0]] * (g[[k, 0]] - dot);
                    }
                }
                self.accumulate(grads, *e, ge);
            }
            Op::EdgePairScore { p, q, v, pattern, slope } => {
                let (pv, qv, vv) = (self.value(*p), self.value(*q), self.value(*v));
                let f_dim = pv.ncols();
                let mut gp = Array2::<f64>::zeros(pv.dim());
                let mut gq = Array2::<f64>::zeros(qv.dim());
                let mut gvv = Array2::<f64>::zeros(vv.dim());
                for (k, i, j) in pattern.iter() {
                    let gk = g[[k, 0]];
                    if gk == 0.0 {
                        continue;
                    }
                    for f in 0..f_dim {
                        let z = pv[[i, f]] + qv[[j, f]];
                        let dz = gk * vv[[f, 0]] * leaky_grad(z, *slope);
                        gp[[i, f]] += dz;
                        gq[[j, f]] += dz;
                        gvv[[f, 0]] += gk * leaky(z, *slope);
                    }
                }
                self.accumulate(grads, *p, gp);
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *v, gvv);
            }
            Op::EdgeAbsDiffScore { c, v, pattern } => {
                let (cv, vv) = (self.value(*c), self.value(*v));
                let f_dim = cv.ncols();
                let mut gc = Array2::<f64>::zeros(cv.dim());
                let mut gvv = Array2::<f64>::zeros(vv.dim());
                for (k, i, j) in pattern.iter() {
                    let gk = g[[k, 0]];
                    if gk == 0.0 {
                        continue;
                    }
                    for f in 0..f_dim {
                        let d = cv[[i, f]] - cv[[j, f]];
                        let dd = gk * vv[[f, 0]] * sign(d);
                        gc[[i, f]] += dd;
                        gc[[j, f]] -= dd;
                        gvv[[f, 0]] += gk * d.abs();
                    }
                }
                self.accumulate(grads, *c, gc);
                self.accumulate(grads, *v, gvv);
            }
            Op::HardStep => return Err(NumError::NonDifferentiable(node.op.name())),
        }
        Ok(())
    }

    /// Operation name of a node, for diagnostics.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}
