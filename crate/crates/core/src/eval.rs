//! Experiment harness: grids of training runs, aggregated result tables and
//! the CSV artifacts behind them.
//!
//! Every cell is keyed by `(model, nodes, anchors, noise, threshold, seed)`
//! and is a pure function of that key and the experiment's training
//! template, so a cell can be re-run from the metadata sidecar alone.
//!
//! Layout under the results root:
//!
//! ```text
//! <experiment>/metadata.json          spec, config hash, seeds, version
//! <experiment>/config.json            effective experiment spec
//! <experiment>/cells.csv              one row per cell (deterministic)
//! <experiment>/summary.csv            mean/std per (model, condition)
//! <experiment>/timing.csv             wall-clock seconds per cell
//! <experiment>/<model>/<condition>/seed<k>.csv         training history
//! <experiment>/<model>/<condition>/seed<k>.timing.csv  timed history
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::models::{Model, ModelError, ModelKind, Prepared};
use crate::num::Graph;
use crate::scenario::{generate_scenario, measure_distances, MeasurementMatrix, NoiseConfig, Scenario, ScenarioError};
use crate::train::{train, TrainConfig, TrainError, TrainedModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

/// Agent RMSE `||R_u - R_hat_u||_F / sqrt(N_u)` in meters per node.
pub fn rmse_agents(pred: &Array2<f64>, scenario: &Scenario) -> f64 {
    let a = scenario.n_anchors;
    let d = &pred.slice(s![a.., ..]) - &scenario.positions.slice(s![a.., ..]);
    (d.iter().map(|v| v * v).sum::<f64>() / scenario.n_agents() as f64).sqrt()
}

/// LOS variance and NLOS probability of one noise condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub sigma2: f64,
    pub p_b: f64,
}

impl Condition {
    pub const fn new(sigma2: f64, p_b: f64) -> Self {
        Self { sigma2, p_b }
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig::new(self.sigma2, self.p_b)
    }

    /// `s<sigma2>_pb<p_b>`
    pub fn label(&self) -> String {
        format!("s{}_pb{}", self.sigma2, self.p_b)
    }
}

/// The five noise conditions of the reference comparison.
pub const TABLE_CONDITIONS: [Condition; 5] = [
    Condition::new(0.04, 0.0),
    Condition::new(0.1, 0.1),
    Condition::new(0.25, 0.1),
    Condition::new(0.25, 0.3),
    Condition::new(0.5, 0.5),
];

/// Published RMSE for `kind` at one of [`TABLE_CONDITIONS`].
pub fn reference_rmse(kind: ModelKind, cond: Condition) -> Option<f64> {
    let col = TABLE_CONDITIONS.iter().position(|c| *c == cond)?;
    let row: [f64; 5] = match kind {
        ModelKind::Mlp => [0.1865, 0.1769, 0.2305, 0.2623, 0.3358],
        ModelKind::Gcn => [0.1038, 0.1128, 0.1006, 0.1302, 0.1755],
        ModelKind::Agnn1 => [0.0677, 0.0732, 0.0779, 0.0817, 0.1290],
        ModelKind::Agnn2 => [0.0486, 0.0551, 0.0638, 0.0812, 0.1015],
    };
    Some(row[col])
}

/// A grid of training runs. Cells are the cartesian product of all grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub models: Vec<ModelKind>,
    pub noise: Vec<Condition>,
    pub anchors: Vec<usize>,
    /// Hard thresholds `T_h`.
    pub thresholds: Vec<f64>,
    pub nodes: Vec<usize>,
    /// Deployment area at `nodes[0]`; larger grids keep its density.
    pub area: (f64, f64),
    pub seeds: Vec<u64>,
    /// Template; `seed` and `model.t_h` are overridden per cell.
    pub train: TrainConfig,
}

impl ExperimentSpec {
    /// One cell per model, condition and seed at the default deployment.
    pub fn base(name: &str, models: Vec<ModelKind>, noise: Vec<Condition>, seeds: Vec<u64>) -> Self {
        let train = TrainConfig::default();
        Self {
            name: name.into(),
            models,
            noise,
            anchors: vec![50],
            thresholds: vec![train.model.t_h],
            nodes: vec![500],
            area: (5.0, 5.0),
            seeds,
            train,
        }
    }

    pub fn noise_table(seeds: Vec<u64>) -> Self {
        Self::base("noise-table", ModelKind::ALL.to_vec(), TABLE_CONDITIONS.to_vec(), seeds)
    }

    /// GCN over a threshold grid.
    pub fn threshold_sweep(noise: Vec<Condition>, thresholds: Vec<f64>, seeds: Vec<u64>) -> Self {
        Self { thresholds, ..Self::base("sweep-threshold", vec![ModelKind::Gcn], noise, seeds) }
    }

    /// GCN and MLP over an anchor-count grid.
    pub fn anchor_sweep(noise: Vec<Condition>, anchors: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self { anchors, ..Self::base("sweep-anchors", vec![ModelKind::Mlp, ModelKind::Gcn], noise, seeds) }
    }

    /// Wall-clock per training run over a node-count grid at fixed density.
    pub fn timing(models: Vec<ModelKind>, nodes: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self { nodes, ..Self::base("timing", models, vec![Condition::new(0.1, 0.1)], seeds) }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Config(m.to_string()));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("experiment name must be a non-empty path component");
        }
        if self.models.is_empty() || self.noise.is_empty() || self.anchors.is_empty() {
            return bad("models, noise and anchors grids must be non-empty");
        }
        if self.thresholds.is_empty() || self.nodes.is_empty() || self.seeds.is_empty() {
            return bad("thresholds, nodes and seeds grids must be non-empty");
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        for c in &self.noise {
            c.noise().validate()?;
        }
        for &n in &self.nodes {
            for &a in &self.anchors {
                if a == 0 || a >= n {
                    return Err(EvalError::Config(format!("anchors {a} must lie in 1..{n}")));
                }
            }
        }
        self.train.validate()?;
        Ok(())
    }

    /// All cells in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &n in &self.nodes {
                for &n_anchors in &self.anchors {
                    for &condition in &self.noise {
                        for &t_h in &self.thresholds {
                            for &seed in &self.seeds {
                                out.push(Cell { model, n, n_anchors, condition, t_h, seed });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// One training run of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: ModelKind,
    pub n: usize,
    pub n_anchors: usize,
    pub condition: Condition,
    pub t_h: f64,
    pub seed: u64,
}

impl Cell {
    /// Condition directory name: `n<N>_nl<N_l>_s<sigma2>_pb<p_B>_th<T_h>`.
    pub fn label(&self) -> String {
        format!("n{}_nl{}_{}_th{}", self.n, self.n_anchors, self.condition.label(), self.t_h)
    }

    /// `area` holds for the first node count of the grid; other counts
    /// scale the sides to keep node density fixed.
    fn area(&self, spec: &ExperimentSpec) -> (f64, f64) {
        let k = (self.n as f64 / spec.nodes[0] as f64).sqrt();
        (spec.area.0 * k, spec.area.1 * k)
    }

    /// Deployment and measurements of this cell. Positions depend on the
    /// seed and node count only, so anchor sweeps share deployments.
    pub fn data(&self, spec: &ExperimentSpec) -> Result<(Scenario, MeasurementMatrix), EvalError> {
        let s = generate_scenario(self.n, self.n_anchors, self.area(spec), self.seed)?;
        let x = measure_distances(&s, &self.condition.noise(), self.seed)?;
        Ok((s, x))
    }

    pub fn train_config(&self, spec: &ExperimentSpec) -> TrainConfig {
        let mut cfg = spec.train.clone();
        cfg.seed = self.seed;
        cfg.model.t_h = self.t_h;
        cfg
    }

    /// Trains this cell's model.
    pub fn train(&self, spec: &ExperimentSpec) -> Result<(Scenario, MeasurementMatrix, TrainedModel), EvalError> {
        let (s, x) = self.data(spec)?;
        let t = train(self.model, &s, &x, &self.train_config(spec))?;
        Ok((s, x, t))
    }

    pub fn run(&self, spec: &ExperimentSpec) -> Result<CellOutput, EvalError> {
        let (_, _, t) = self.train(spec)?;
        Ok(CellOutput {
            rmse: t.metrics.final_rmse,
            anchor_loss: t.metrics.final_anchor_loss,
            seconds: t.metrics.seconds,
            metrics_csv: t.metrics.to_csv(),
            timed_csv: t.metrics.to_timed_csv(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellOutput {
    pub rmse: f64,
    pub anchor_loss: f64,
    pub seconds: f64,
    /// Deterministic training history.
    pub metrics_csv: String,
    pub timed_csv: String,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    /// Failure reason when the run did not complete.
    pub outcome: Result<CellOutput, String>,
}

/// Mean and sample standard deviation over the successful seeds of one
/// `(model, condition)` group.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub model: ModelKind,
    pub condition: String,
    pub mean: f64,
    pub std: f64,
    pub seconds: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub reference: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[derive(Clone, Debug)]
pub struct ResultTable {
    pub experiment: String,
    pub results: Vec<CellResult>,
}

impl ResultTable {
    /// Groups in first-appearance order.
    pub fn aggregate(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(ModelKind, String, Condition, usize)> = Vec::new();
        for r in &self.results {
            let key = (r.cell.model, r.cell.label());
            if !keys.iter().any(|k| k.0 == key.0 && k.1 == key.1) {
                keys.push((key.0, key.1, r.cell.condition, r.cell.n_anchors));
            }
        }
        keys.into_iter()
            .map(|(model, condition, cond, _)| {
                let group: Vec<&CellResult> =
                    self.results.iter().filter(|r| r.cell.model == model && r.cell.label() == condition).collect();
                let ok: Vec<&CellOutput> = group.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
                let (mean, std) = mean_std(&ok.iter().map(|o| o.rmse).collect::<Vec<_>>());
                let seconds = mean_std(&ok.iter().map(|o| o.seconds).collect::<Vec<_>>()).0;
                Aggregate {
                    model,
                    condition,
                    mean,
                    std,
                    seconds,
                    n_ok: ok.len(),
                    n_failed: group.len() - ok.len(),
                    reference: reference_rmse(model, cond),
                }
            })
            .collect()
    }

    /// Seed-mean RMSE of the cells of `model` accepted by `filter`.
    pub fn mean_rmse(&self, model: ModelKind, filter: impl Fn(&Cell) -> bool) -> Option<f64> {
        let xs: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.cell.model == model && filter(&r.cell))
            .filter_map(|r| r.outcome.as_ref().ok().map(|o| o.rmse))
            .collect();
        (!xs.is_empty()).then(|| mean_std(&xs).0)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.results.iter().filter(|r| r.outcome.is_err())
    }

    /// `model,condition,seed,status,rmse,anchor_loss`, no timings.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("model,condition,seed,status,rmse,anchor_loss\n");
        for r in &self.results {
            let c = &r.cell;
            match &r.outcome {
                Ok(o) => {
                    let _ = writeln!(out, "{},{},{},ok,{:.17e},{:.17e}", c.model, c.label(), c.seed, o.rmse, o.anchor_loss);
                }
                Err(e) => {
                    let _ = writeln!(out, "{},{},{},failed: {},,", c.model, c.label(), c.seed, e.replace([',', '\n'], ";"));
                }
            }
        }
        out
    }

    /// `model,condition,seed,seconds`
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("model,condition,seed,seconds\n");
        for r in &self.results {
            if let Ok(o) = &r.outcome {
                let _ = writeln!(out, "{},{},{},{:.6}", r.cell.model, r.cell.label(), r.cell.seed, o.seconds);
            }
        }
        out
    }

    /// `model,condition,n_ok,n_failed,mean_rmse,std_rmse,reference`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("model,condition,n_ok,n_failed,mean_rmse,std_rmse,reference\n");
        for a in self.aggregate() {
            let reference = a.reference.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{}",
                a.model, a.condition, a.n_ok, a.n_failed, a.mean, a.std, reference
            );
        }
        out
    }

    /// Fixed-width table: one row per model, one column per condition,
    /// `mean ± std [reference]` per entry.
    pub fn to_text(&self) -> String {
        let aggs = self.aggregate();
        let mut conds: Vec<String> = Vec::new();
        let mut models: Vec<ModelKind> = Vec::new();
        for a in &aggs {
            if !conds.contains(&a.condition) {
                conds.push(a.condition.clone());
            }
            if !models.contains(&a.model) {
                models.push(a.model);
            }
        }
        let mut out = format!("{:<8}", "model");
        for c in &conds {
            let _ = write!(out, " | {c:<32}");
        }
        out.push('\n');
        for m in models {
            let _ = write!(out, "{:<8}", m.to_string());
            for c in &conds {
                let cell = match aggs.iter().find(|a| a.model == m && &a.condition == c) {
                    Some(a) => {
                        let r = a.reference.map(|r| format!(" [{r:.4}]")).unwrap_or_default();
                        let f = if a.n_failed > 0 { format!(" ({} failed)", a.n_failed) } else { String::new() };
                        format!("{:.4} ± {:.4}{r}{f}", a.mean, a.std)
                    }
                    None => "-".into(),
                };
                let _ = write!(out, " | {cell:<32}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every cell of `spec` on up to `jobs` worker threads. Failed cells
/// are recorded and do not stop the run. `progress` sees each finished
/// cell in completion order.
pub fn run_experiment(
    spec: &ExperimentSpec,
    jobs: usize,
    progress: &(dyn Fn(&CellResult) + Sync),
) -> Result<ResultTable, EvalError> {
    spec.validate()?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Config(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let r = CellResult { cell: *cell, outcome: cell.run(spec).map_err(|e| e.to_string()) };
                progress(&r);
                r
            })
            .collect()
    });
    Ok(ResultTable { experiment: spec.name.clone(), results })
}

/// Noise-condition comparison of the four model kinds.
pub fn run_noise_table(spec: &ExperimentSpec, jobs: usize) -> Result<ResultTable, EvalError> {
    run_experiment(spec, jobs, &|_| {})
}

/// GCN RMSE against the hard threshold.
pub fn sweep_threshold(spec: &ExperimentSpec, jobs: usize) -> Result<ResultTable, EvalError> {
    run_experiment(spec, jobs, &|_| {})
}

/// GCN and MLP RMSE against the anchor count.
pub fn sweep_anchors(spec: &ExperimentSpec, jobs: usize) -> Result<ResultTable, EvalError> {
    run_experiment(spec, jobs, &|_| {})
}

/// Full training wall-clock per model and node count. Runs on one thread
/// so timings do not compete.
pub fn run_timing(spec: &ExperimentSpec) -> Result<ResultTable, EvalError> {
    run_experiment(spec, 1, &|_| {})
}

/// Sidecar written next to every experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub experiment: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub spec: ExperimentSpec,
}

impl Metadata {
    pub fn new(spec: &ExperimentSpec) -> Self {
        Self {
            experiment: spec.name.clone(),
            config_hash: spec.config_hash(),
            seeds: spec.seeds.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let meta: Metadata = serde_json::from_str(&text)?;
        if meta.spec.config_hash() != meta.config_hash {
            return Err(EvalError::Config(format!(
                "{}: config hash {} does not match its spec ({})",
                path.display(),
                meta.config_hash,
                meta.spec.config_hash()
            )));
        }
        Ok(meta)
    }
}

/// Relative path of a cell's history CSV.
pub fn cell_path(cell: &Cell) -> PathBuf {
    PathBuf::from(cell.model.to_string()).join(cell.label()).join(format!("seed{}.csv", cell.seed))
}

fn write(path: &Path, contents: &str) -> Result<(), EvalError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Writes all artifacts of `table` under `root/<experiment>` and returns
/// that directory.
pub fn write_experiment(root: &Path, spec: &ExperimentSpec, table: &ResultTable) -> Result<PathBuf, EvalError> {
    let dir = root.join(&spec.name);
    let meta = Metadata::new(spec);
    write(&dir.join("metadata.json"), &serde_json::to_string_pretty(&meta)?)?;
    write(&dir.join("config.json"), &serde_json::to_string_pretty(spec)?)?;
    write(&dir.join("cells.csv"), &table.cells_csv())?;
    write(&dir.join("summary.csv"), &table.summary_csv())?;
    write(&dir.join("timing.csv"), &table.timing_csv())?;
    for r in &table.results {
        if let Ok(o) = &r.outcome {
            let p = dir.join(cell_path(&r.cell));
            write(&p, &o.metrics_csv)?;
            write(&p.with_extension("timing.csv"), &o.timed_csv)?;
        }
    }
    Ok(dir)
}

/// Re-runs one cell recorded in a metadata sidecar and returns its history
/// CSV. `condition` is the cell's directory label.
pub fn rerun_cell(metadata: &Path, model: ModelKind, condition: &str, seed: u64) -> Result<String, EvalError> {
    let meta = Metadata::read(metadata)?;
    let cell = meta
        .spec
        .cells()
        .into_iter()
        .find(|c| c.model == model && c.label() == condition && c.seed == seed)
        .ok_or_else(|| EvalError::Config(format!("no cell {model}/{condition}/seed{seed} in {}", metadata.display())))?;
    Ok(cell.run(&meta.spec)?.metrics_csv)
}

/// Equal-width histogram over `[0, hi]`; values at or above `hi` land in
/// the last bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], hi: f64, bins: usize) -> Result<Self, EvalError> {
        if bins == 0 || !(hi > 0.0) {
            return Err(EvalError::Config(format!("histogram needs bins >= 1 and hi > 0, got {bins} and {hi}")));
        }
        let w = hi / bins as f64;
        let edges = (0..=bins).map(|k| k as f64 * w).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = ((v / w).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Ok(Self { edges, counts })
    }

    /// `bin_lo,bin_hi,count`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{:.6},{:.6},{}", self.edges[k], self.edges[k + 1], c);
        }
        out
    }
}

/// Rescaled ALM-I thresholds `l_max * sigmoid(t_raw)` of a model.
pub fn learned_thresholds(model: &Model) -> Result<Vec<f64>, EvalError> {
    if model.kind != ModelKind::Agnn1 {
        return Err(EvalError::Config(format!("learned thresholds need an agnn1 model, got {}", model.kind)));
    }
    let t = model.params.get("t_raw").ok_or_else(|| EvalError::Config("model has no t_raw".into()))?;
    Ok(t.iter().map(|&v| model.l_max / (1.0 + (-v).exp())).collect())
}

/// Histogram of a trained AGNN-I model's thresholds over `[0, l_max]`.
pub fn export_threshold_histogram(model: &Model, bins: usize) -> Result<Histogram, EvalError> {
    Histogram::new(&learned_thresholds(model)?, model.l_max, bins)
}

/// ALM-II output for one node: per column `j`, coarse membership, the soft
/// weight `a_ij` and the threshold `T^A_ij` (both 0 outside the coarse set).
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapRow {
    pub node: usize,
    pub coarse: Vec<bool>,
    pub a: Vec<f64>,
    pub t: Vec<f64>,
}

impl HeatmapRow {
    /// Number of fine neighbors, self excluded.
    pub fn support(&self) -> usize {
        self.a.iter().enumerate().filter(|&(j, &v)| j != self.node && v > 0.0).count()
    }
}

/// Fine-set weights and thresholds of a trained AGNN-II model for `nodes`.
pub fn export_attention_heatmaps(model: &Model, x: &MeasurementMatrix, nodes: &[usize]) -> Result<Vec<HeatmapRow>, EvalError> {
    if model.kind != ModelKind::Agnn2 {
        return Err(EvalError::Config(format!("attention heatmaps need an agnn2 model, got {}", model.kind)));
    }
    let n = model.n;
    if let Some(&bad) = nodes.iter().find(|&&i| i >= n) {
        return Err(EvalError::Config(format!("node id {bad} out of range for {n} nodes")));
    }
    let prep = model.prepare(x)?;
    let Prepared::Alm2 { coarse, .. } = &prep else {
        return Err(EvalError::Config("unexpected prepared inputs".into()));
    };
    let mut g = Graph::new();
    let vars: Vec<_> = model.params.values.iter().map(|t| g.constant(t.clone())).collect();
    let f = model.forward(&mut g, &vars, &prep, None)?;
    let soft = f.soft.ok_or_else(|| EvalError::Config("model produced no soft graph".into()))?;
    let a = g.value(soft.a);
    let t = g.value(f.thresholds.ok_or_else(|| EvalError::Config("model produced no thresholds".into()))?);
    Ok(nodes
        .iter()
        .map(|&i| {
            let mut row = HeatmapRow { node: i, coarse: vec![false; n], a: vec![0.0; n], t: vec![0.0; n] };
            for k in coarse.row_range(i) {
                let j = coarse.indices()[k];
                row.coarse[j] = true;
                row.a[j] = a[[k, 0]];
                row.t[j] = t[[k, 0]];
            }
            row
        })
        .collect())
}

/// `node,j,coarse,a,t_a`
pub fn heatmaps_csv(rows: &[HeatmapRow]) -> String {
    let mut out = String::from("node,j,coarse,a,t_a\n");
    for r in rows {
        for j in 0..r.a.len() {
            let _ = writeln!(out, "{},{},{},{:.12e},{:.12e}", r.node, j, u8::from(r.coarse[j]), r.a[j], r.t[j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rmse_of_constant_offset() {
        let s = Scenario::from_positions(array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], 1, (5.0, 5.0), 0).unwrap();
        assert_eq!(rmse_agents(&s.positions, &s), 0.0);
        let mut p = s.positions.clone();
        for i in 1..3 {
            p[[i, 0]] += 0.3;
            p[[i, 1]] += 0.4;
        }
        p[[0, 0]] = 100.0;
        assert!((rmse_agents(&p, &s) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn references_cover_table() {
        for kind in ModelKind::ALL {
            for c in TABLE_CONDITIONS {
                assert!(reference_rmse(kind, c).is_some());
            }
        }
        assert_eq!(reference_rmse(ModelKind::Gcn, Condition::new(0.1, 0.1)), Some(0.1128));
        assert_eq!(reference_rmse(ModelKind::Gcn, Condition::new(0.0, 0.0)), None);
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::noise_table(vec![0, 1]);
        assert!(spec.validate().is_ok());
        spec.seeds = vec![1, 1];
        assert!(spec.validate().is_err());
        spec.seeds = vec![];
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::anchor_sweep(vec![Condition::new(0.1, 0.1)], vec![500], vec![0]);
        assert!(spec.validate().is_err());
        spec.anchors = vec![20, 40];
        assert_eq!(spec.cells().len(), 4);
    }

    #[test]
    fn histogram_counts_sum() {
        let h = Histogram::new(&[0.0, 1.0, 1.99, 2.0, 5.0], 2.0, 4).unwrap();
        assert_eq!(h.counts, vec![1, 0, 1, 3]);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert!(Histogram::new(&[], 0.0, 3).is_err());
    }

    #[test]
    fn hash_changes_with_spec() {
        let a = ExperimentSpec::noise_table(vec![0]);
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.train.epochs = 10;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
