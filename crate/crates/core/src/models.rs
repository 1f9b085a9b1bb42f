//! Localization models: MLP, GCN and the two attentional GNNs.
//!
//! Every model maps the measured distance matrix to `N x 2` positions. GCN
//! and MLP consume a hard-thresholded graph; AGNN-I and AGNN-II learn their
//! adjacency (ALM-I: per-node thresholds, ALM-II: per-edge attention
//! thresholds inside a coarse neighbor set) and feed it to a stack of
//! multi-head graph attention layers (MGAL).
//!
//! A forward pass records on a [`Graph`]. [`Model::forward`] returns both an
//! evaluation-mode output and, when a dropout generator is supplied, a
//! training-mode output that reuses every computation upstream of the first
//! dropout.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphcore::{self, hard_threshold, GraphError, Operator, SoftGraph};
use crate::num::checkpoint::Checkpoint;
use crate::num::{Graph, NumError, Pattern, Tensor, Var};
use crate::scenario::MeasurementMatrix;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model kind {0:?} (expected mlp, gcn, agnn1 or agnn2)")]
    UnknownKind(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("node {node} has an empty coarse neighbor set; increase t_h0 (currently {t_h0})")]
    EmptyCoarse { node: usize, t_h0: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Gcn,
    Agnn1,
    Agnn2,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Mlp, ModelKind::Gcn, ModelKind::Agnn1, ModelKind::Agnn2];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
            ModelKind::Agnn1 => "agnn1",
            ModelKind::Agnn2 => "agnn2",
        }
    }

    pub fn is_attentional(self) -> bool {
        matches!(self, ModelKind::Agnn1 | ModelKind::Agnn2)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "gcn" => Ok(ModelKind::Gcn),
            "agnn1" | "agnni" => Ok(ModelKind::Agnn1),
            "agnn2" | "agnnii" => Ok(ModelKind::Agnn2),
            _ => Err(ModelError::UnknownKind(s.to_string())),
        }
    }
}

/// Architecture hyperparameters shared by all kinds; each kind reads the
/// fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of layers.
    pub layers: usize,
    /// Hidden width of GCN and MLP.
    pub hidden: usize,
    /// Hidden width per attention head.
    pub mgal_hidden: usize,
    pub heads: usize,
    /// Width of the MGAL attention network.
    pub f_att: usize,
    /// Width of the ALM-II attention network.
    pub f_a: usize,
    /// Hard threshold for GCN and MLP.
    pub t_h: f64,
    /// Coarse threshold for ALM-II.
    pub t_h0: f64,
    /// Slope of the approximating step function.
    pub gamma: f64,
    /// Threshold ceiling for ALM-I; `None` means `2 * t_h`, so untrained
    /// thresholds sit at the GCN threshold.
    pub l_max: Option<f64>,
    /// Standard deviation of the random ALM-I threshold initialization.
    pub t_init_std: f64,
    /// Negative slope of the attention LeakyReLU.
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 2000,
            mgal_hidden: 64,
            heads: 4,
            f_att: 16,
            f_a: 16,
            t_h: 1.2,
            t_h0: 4.0,
            gamma: 100.0,
            l_max: None,
            t_init_std: 1.0,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.hidden == 0 || self.mgal_hidden == 0 || self.heads == 0 || self.f_att == 0 || self.f_a == 0 {
            return bad("hidden, mgal_hidden, heads, f_att and f_a must be >= 1".into());
        }
        if !(self.t_h >= 0.0 && self.t_h.is_finite()) {
            return bad(format!("t_h must be >= 0, got {}", self.t_h));
        }
        if !(self.t_h0 > 0.0 && self.t_h0.is_finite()) {
            return bad(format!("t_h0 must be > 0, got {}", self.t_h0));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if let Some(l) = self.l_max {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("l_max must be > 0, got {l}"));
            }
        }
        if !(self.t_init_std >= 0.0 && self.t_init_std.is_finite()) {
            return bad(format!("t_init_std must be >= 0, got {}", self.t_init_std));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return bad(format!("leaky_slope must be >= 0, got {}", self.leaky_slope));
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Tensor>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.values.iter().map(|t| g.param(t.clone())).collect()
    }
}

/// Uniform Glorot initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || u.sample(rng))
}

/// Per-head parameters of one attention layer.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    /// `D_in x D_out` feature transform.
    pub w: Var,
    /// `2 D_out x F_att` attention weights.
    pub w_att: Var,
    /// `F_att x 1` attention vector.
    pub v_att: Var,
}

/// Input features of an attention layer.
#[derive(Clone, Copy, Debug)]
pub enum Features<'a> {
    Dense(Var),
    /// Edge values over a pattern, i.e. a sparse `N x N` feature matrix.
    Sparse { pattern: &'a Rc<Pattern>, values: Var },
}

fn transform(g: &mut Graph, h: Features<'_>, w: Var) -> Result<Var, NumError> {
    match h {
        Features::Dense(h) => g.matmul(h, w),
        Features::Sparse { pattern, values } => g.spmm(pattern, values, w),
    }
}

/// Attention coefficients of one head over `fine` given transformed
/// features `h_t = h W`. Returns the `nnz x 1` softmax weights.
pub fn attention_coefficients(
    g: &mut Graph,
    fine: &Rc<Pattern>,
    h_t: Var,
    w_att: Var,
    v_att: Var,
    slope: f64,
) -> Result<Var, NumError> {
    let d = g.shape(h_t).1;
    if g.shape(w_att).0 != 2 * d {
        return Err(NumError::Shape { op: "mgal_attention", lhs: g.shape(h_t), rhs: g.shape(w_att) });
    }
    let top = g.slice_rows(w_att, 0, d)?;
    let bottom = g.slice_rows(w_att, d, 2 * d)?;
    let p = g.matmul(h_t, top)?;
    let q = g.matmul(h_t, bottom)?;
    let e = g.edge_pair_score(p, q, v_att, fine, slope)?;
    g.edge_softmax(e, fine)
}

/// One multi-head graph attention layer. Hidden layers apply ReLU per head
/// and concatenate; the final layer averages the heads with no
/// nonlinearity.
pub fn mgal_layer(
    g: &mut Graph,
    fine: &Rc<Pattern>,
    h: Features<'_>,
    heads: &[HeadVars],
    final_layer: bool,
    slope: f64,
) -> Result<Var, ModelError> {
    if heads.is_empty() {
        return Err(ModelError::Config("mgal layer needs at least one head".into()));
    }
    if let Some(i) = (0..fine.nrows()).find(|&i| fine.row(i).is_empty()) {
        return Err(ModelError::Config(format!("node {i} has an empty fine neighbor set")));
    }
    let mut outs = Vec::with_capacity(heads.len());
    for hv in heads {
        let h_t = transform(g, h, hv.w)?;
        let alpha = attention_coefficients(g, fine, h_t, hv.w_att, hv.v_att, slope)?;
        let agg = g.spmm(fine, alpha, h_t)?;
        outs.push(if final_layer { agg } else { g.relu(agg) });
    }
    if final_layer {
        let mut acc = outs[0];
        for &o in &outs[1..] {
            acc = g.add(acc, o)?;
        }
        Ok(g.scale(acc, 1.0 / heads.len() as f64))
    } else if outs.len() == 1 {
        Ok(outs[0])
    } else {
        Ok(g.concat_cols(&outs)?)
    }
}

/// Graph-dependent inputs of a model, computed once per measurement matrix.
#[derive(Clone, Debug)]
pub enum Prepared {
    /// `z` is `X_hat`; `agg` is `A_hat` for GCN.
    Dense { z: Operator, agg: Option<Operator>, isolated: Vec<usize> },
    Alm1 { candidate: Rc<Pattern>, x_edges: Rc<Vec<f64>>, l_max: f64 },
    Alm2 { coarse: Rc<Pattern>, x: Rc<MeasurementMatrix>, rowmax: Vec<f64> },
}

/// Outputs of a forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Evaluation-mode predictions (no dropout).
    pub eval: Var,
    /// Training-mode predictions, when a dropout generator was supplied.
    pub train: Option<Var>,
    /// Learned soft graph for the attentional kinds.
    pub soft: Option<SoftGraph>,
    /// Rescaled ALM-I thresholds or ALM-II edge thresholds.
    pub thresholds: Option<Var>,
}

/// Dropout settings for a training-mode pass.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub n: usize,
    pub params: ParamStore,
    /// ALM-I threshold ceiling resolved against the measurements.
    pub l_max: f64,
}

impl Model {
    /// Fresh parameters for the `n` nodes of `x`.
    pub fn init(
        kind: ModelKind,
        config: &ModelConfig,
        x: &MeasurementMatrix,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let n = x.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let out = 2;
        match kind {
            ModelKind::Mlp | ModelKind::Gcn => {
                let mut d_in = n;
                for k in 0..config.layers {
                    let d_out = if k + 1 == config.layers { out } else { config.hidden };
                    params.push(format!("w{}", k + 1), glorot(d_in, d_out, &mut rng));
                    d_in = d_out;
                }
            }
            ModelKind::Agnn1 | ModelKind::Agnn2 => {
                if kind == ModelKind::Agnn1 {
                    let normal = Normal::new(0.0, config.t_init_std).expect("validated std");
                    let t = Array2::from_shape_simple_fn((n, 1), || normal.sample(&mut rng));
                    params.push("t_raw", t);
                } else {
                    params.push("w_a", glorot(n, config.f_a, &mut rng));
                    params.push("v_a", glorot(config.f_a, 1, &mut rng));
                }
                let mut d_in = n;
                for k in 0..config.layers {
                    let last = k + 1 == config.layers;
                    let d_out = if last { out } else { config.mgal_hidden };
                    for l in 0..config.heads {
                        let pre = format!("l{}h{}", k + 1, l + 1);
                        params.push(format!("{pre}.w"), glorot(d_in, d_out, &mut rng));
                        params.push(format!("{pre}.w_att"), glorot(2 * d_out, config.f_att, &mut rng));
                        params.push(format!("{pre}.v_att"), glorot(config.f_att, 1, &mut rng));
                    }
                    d_in = d_out * config.heads;
                }
            }
        }
        let l_max = config.l_max.unwrap_or(2.0 * config.t_h);
        if !(l_max > 0.0) {
            return Err(ModelError::Config("l_max resolved to 0; set l_max or a positive t_h".into()));
        }
        Ok(Self { kind, config: config.clone(), n, params, l_max })
    }

    /// Precomputes the graph-dependent inputs.
    pub fn prepare(&self, x: &MeasurementMatrix) -> Result<Prepared, ModelError> {
        if x.n() != self.n {
            return Err(ModelError::Config(format!(
                "model built for {} nodes, measurements have {}",
                self.n,
                x.n()
            )));
        }
        prepare(self.kind, &self.config, self.l_max, x)
    }

    /// Records a forward pass. `vars` are the bound parameters in store
    /// order.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        prep: &Prepared,
        dropout: Option<Dropout<'_>>,
    ) -> Result<Forward, ModelError> {
        match (self.kind, prep) {
            (ModelKind::Mlp | ModelKind::Gcn, Prepared::Dense { z, agg, .. }) => {
                dense_forward(g, vars, z, agg.as_ref(), dropout)
            }
            (ModelKind::Agnn1, Prepared::Alm1 { candidate, x_edges, l_max }) => {
                let (soft, t_hat) =
                    graphcore::soft_threshold_edges(g, candidate, x_edges, vars[0], self.config.gamma, *l_max)?;
                let mut f = self.mgal_stack(g, &vars[1..], soft, dropout)?;
                f.thresholds = Some(t_hat);
                Ok(f)
            }
            (ModelKind::Agnn2, Prepared::Alm2 { coarse, x, rowmax }) => {
                let (soft, t_a) = alm2(g, coarse, x, rowmax, vars[0], vars[1], &self.config)?;
                let mut f = self.mgal_stack(g, &vars[2..], soft, dropout)?;
                f.thresholds = Some(t_a);
                Ok(f)
            }
            _ => Err(ModelError::Config(format!("prepared inputs do not match model kind {}", self.kind))),
        }
    }

    fn heads(&self, vars: &[Var], layer: usize) -> Vec<HeadVars> {
        let per_layer = 3 * self.config.heads;
        (0..self.config.heads)
            .map(|l| {
                let b = layer * per_layer + 3 * l;
                HeadVars { w: vars[b], w_att: vars[b + 1], v_att: vars[b + 2] }
            })
            .collect()
    }

    fn mgal_stack(
        &self,
        g: &mut Graph,
        vars: &[Var],
        soft: SoftGraph,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<Forward, ModelError> {
        let (fine, map) = soft.fine(g);
        let x0 = g.gather_rows(soft.x_hat, &map)?;
        let slope = self.config.leaky_slope;
        let layers = self.config.layers;
        let mut h = mgal_layer(
            g,
            &fine,
            Features::Sparse { pattern: &fine, values: x0 },
            &self.heads(vars, 0),
            layers == 1,
            slope,
        )?;
        if layers == 1 {
            return Ok(Forward { eval: h, train: dropout.map(|_| h), soft: Some(soft), thresholds: None });
        }
        let mut h_train = None;
        for k in 1..layers {
            let heads = self.heads(vars, k);
            let last = k + 1 == layers;
            let next_train = match (&mut dropout, h_train) {
                (Some(d), prev) => {
                    let src = prev.unwrap_or(h);
                    let dropped = g.dropout(src, d.p, d.rng)?;
                    Some(mgal_layer(g, &fine, Features::Dense(dropped), &heads, last, slope)?)
                }
                (None, _) => None,
            };
            h = mgal_layer(g, &fine, Features::Dense(h), &heads, last, slope)?;
            h_train = next_train;
        }
        Ok(Forward { eval: h, train: h_train, soft: Some(soft), thresholds: None })
    }

    /// Evaluation-mode positions.
    pub fn predict(&self, prep: &Prepared) -> Result<Array2<f64>, ModelError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.values.iter().map(|t| g.constant(t.clone())).collect();
        let f = self.forward(&mut g, &vars, prep, None)?;
        Ok(g.value(f.eval).clone())
    }

    /// Checkpoint with a JSON metadata header.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "kind": self.kind,
            "n": self.n,
            "l_max": self.l_max,
            "config": self.config,
        });
        Checkpoint {
            meta: meta.to_string(),
            tensors: self.params.names.iter().cloned().zip(self.params.values.iter().cloned()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Meta {
            kind: ModelKind,
            n: usize,
            l_max: f64,
            config: ModelConfig,
        }
        let meta: Meta = serde_json::from_str(&ck.meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut params = ParamStore::default();
        for (name, t) in &ck.tensors {
            params.push(name.clone(), t.clone());
        }
        Ok(Self { kind: meta.kind, config: meta.config, n: meta.n, params, l_max: meta.l_max })
    }
}

/// Precomputes model inputs from measurements.
pub fn prepare(
    kind: ModelKind,
    config: &ModelConfig,
    l_max: f64,
    x: &MeasurementMatrix,
) -> Result<Prepared, ModelError> {
    match kind {
        ModelKind::Mlp | ModelKind::Gcn => {
            let gs = hard_threshold(x, config.t_h)?;
            let agg = (kind == ModelKind::Gcn).then(|| gs.norm_operator());
            Ok(Prepared::Dense { z: gs.masked_operator(), agg, isolated: gs.isolated })
        }
        ModelKind::Agnn1 => {
            let candidate = graphcore::candidate_pattern(x, l_max);
            let x_edges = Rc::new(candidate.gather(&x.x));
            Ok(Prepared::Alm1 { candidate: Rc::new(candidate), x_edges, l_max })
        }
        ModelKind::Agnn2 => {
            let n = x.n();
            let coarse = Pattern::from_predicate(n, n, |i, j| i == j || x.x[[i, j]] <= config.t_h0);
            if let Some(node) = (0..n).find(|&i| coarse.row(i).len() < 2) {
                return Err(ModelError::EmptyCoarse { node, t_h0: config.t_h0 });
            }
            let rowmax = x.x.outer_iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
            Ok(Prepared::Alm2 { coarse: Rc::new(coarse), x: Rc::new(x.clone()), rowmax })
        }
    }
}

/// GCN (with `agg`) or MLP (without) forward pass; the first layer is
/// `agg (z W1)` so a sparse `z` keeps its cost linear in the edge count.
pub fn dense_forward(
    g: &mut Graph,
    vars: &[Var],
    z: &Operator,
    agg: Option<&Operator>,
    dropout: Option<Dropout<'_>>,
) -> Result<Forward, ModelError> {
    let mut first = z.apply_var(g, vars[0])?;
    if let Some(a) = agg {
        first = a.apply_var(g, first)?;
    }
    if vars.len() == 1 {
        return Ok(Forward { eval: first, train: dropout.map(|_| first), soft: None, thresholds: None });
    }
    let mut h = g.relu(first);
    let mut h_train = None;
    let mut dropout = dropout;
    for (k, &w) in vars.iter().enumerate().skip(1) {
        let last = k + 1 == vars.len();
        let step = |g: &mut Graph, h: Var| -> Result<Var, NumError> {
            let hw = g.matmul(h, w)?;
            let out = match agg {
                Some(a) => a.apply_var(g, hw)?,
                None => hw,
            };
            Ok(if last { out } else { g.relu(out) })
        };
        let next_train = match dropout.as_mut() {
            Some(d) => {
                let dropped = g.dropout(h_train.unwrap_or(h), d.p, d.rng)?;
                Some(step(g, dropped)?)
            }
            None => None,
        };
        h = step(g, h)?;
        h_train = next_train;
    }
    Ok(Forward { eval: h, train: h_train, soft: None, thresholds: None })
}

/// Plain two-layer GCN prediction `A_hat relu(A_hat X_hat W1) W2` with
/// dense operands, outside any training loop.
pub fn gcn_forward(a_hat: &Array2<f64>, x_hat: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Array2<f64> {
    let h = a_hat.dot(&x_hat.dot(w1)).mapv(|v| v.max(0.0));
    a_hat.dot(&h.dot(w2))
}

/// `relu(X_hat W1) W2`: the GCN with `A_hat = I`.
pub fn mlp_forward(x_hat: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Array2<f64> {
    x_hat.dot(w1).mapv(|v| v.max(0.0)).dot(w2)
}

/// ALM-II: attention thresholds `T_ij = rowmax_i sigmoid(e_ij)` inside the
/// coarse set, followed by the approximating step function. Returns the
/// soft graph over the coarse pattern and the `nnz x 1` thresholds.
pub fn alm2(
    g: &mut Graph,
    coarse: &Rc<Pattern>,
    x: &MeasurementMatrix,
    rowmax: &[f64],
    w_a: Var,
    v_a: Var,
    config: &ModelConfig,
) -> Result<(SoftGraph, Var), ModelError> {
    let e = alm2_scores(g, coarse, x, w_a, v_a, config.leaky_slope)?;
    let s = g.sigmoid(e);
    let rm = g.column(coarse.edge_rows().iter().map(|&i| rowmax[i]).collect());
    let t = g.hadamard(s, rm)?;
    let xe = graphcore::edge_distances(g, coarse, x);
    let soft = graphcore::soft_edges(g, coarse, xe, t, config.gamma)?;
    Ok((soft, t))
}

/// ALM-II attention coefficients `|phi(x_i W_A) - phi(x_j W_A)| v_A` over
/// the coarse pattern.
pub fn alm2_scores(
    g: &mut Graph,
    coarse: &Rc<Pattern>,
    x: &MeasurementMatrix,
    w_a: Var,
    v_a: Var,
    slope: f64,
) -> Result<Var, NumError> {
    let xd = g.constant(x.x.clone());
    let c = g.matmul(xd, w_a)?;
    let c = g.leaky_relu(c, slope);
    g.edge_abs_diff_score(c, v_a, coarse)
}
