//! Full-batch transductive training with an anchor-only loss.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::rmse_agents;
use crate::models::{Dropout, Model, ModelConfig, ModelError, ModelKind, Prepared};
use crate::num::optim::{adam_step, sgd_step, AdamConfig, AdamState};
use crate::num::{Graph, NumError, Var};
use crate::scenario::{MeasurementMatrix, Scenario};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch} (last finite loss {last_finite:?})")]
    NonFinite { epoch: usize, last_finite: Option<f64> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(TrainError::Config(format!("unknown optimizer {other:?} (expected adam or sgd)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub dropout: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            dropout: 0.5,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Evaluation-mode anchor loss before this epoch's update.
    pub anchor_loss: f64,
    /// Evaluation-mode agent RMSE before this epoch's update.
    pub agent_rmse: f64,
    /// Wall-clock seconds since training started, at the end of the epoch.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub history: Vec<EpochRecord>,
    /// Agent RMSE of the final parameters.
    pub final_rmse: f64,
    pub final_anchor_loss: f64,
    pub seconds: f64,
}

impl MetricsRecord {
    /// `epoch,anchor_loss,agent_rmse`. Deterministic for a fixed run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,anchor_loss,agent_rmse\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{:.17e},{:.17e}", r.epoch, r.anchor_loss, r.agent_rmse);
        }
        let _ = writeln!(
            out,
            "final,{:.17e},{:.17e}",
            self.final_anchor_loss, self.final_rmse
        );
        out
    }

    /// `epoch,anchor_loss,agent_rmse,seconds`. Includes wall-clock time and
    /// therefore differs between runs.
    pub fn to_timed_csv(&self) -> String {
        let mut out = String::from("epoch,anchor_loss,agent_rmse,seconds\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{:.17e},{:.17e},{:.6}", r.epoch, r.anchor_loss, r.agent_rmse, r.seconds);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub metrics: MetricsRecord,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.model.kind
    }
}

/// `||P_l - P_hat_l||_F^2` over the anchor rows, as a plain number.
pub fn anchor_loss(pred: &Array2<f64>, scenario: &Scenario) -> f64 {
    let d = &pred.slice(s![..scenario.n_anchors, ..]) - &scenario.positions.slice(s![..scenario.n_anchors, ..]);
    d.iter().map(|v| v * v).sum()
}

/// Anchor loss recorded on a graph.
pub fn anchor_loss_var(g: &mut Graph, pred: Var, scenario: &Scenario) -> Result<Var, NumError> {
    let p = g.slice_rows(pred, 0, scenario.n_anchors)?;
    let t = g.constant(scenario.positions.slice(s![..scenario.n_anchors, ..]).to_owned());
    let d = g.sub(p, t)?;
    Ok(g.frobenius_sq(d))
}

/// Gradient of the anchor loss at the model's current parameters, with
/// dropout disabled. Returns `(loss, grads)` in parameter order.
pub fn loss_and_grad(model: &Model, prep: &Prepared, scenario: &Scenario) -> Result<(f64, Vec<Array2<f64>>), TrainError> {
    let mut g = Graph::new();
    let vars = model.params.bind(&mut g);
    let f = model.forward(&mut g, &vars, prep, None)?;
    let loss = anchor_loss_var(&mut g, f.eval, scenario)?;
    g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(&model.params.values)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Array2::zeros(p.dim())))
        .collect();
    Ok((g.scalar_value(loss), grads))
}

/// Trains a fresh model of `kind` on one scenario.
pub fn train(
    kind: ModelKind,
    scenario: &Scenario,
    x: &MeasurementMatrix,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    cfg.validate()?;
    if x.n() != scenario.n() {
        return Err(TrainError::Config(format!(
            "measurements have {} nodes, scenario has {}",
            x.n(),
            scenario.n()
        )));
    }
    let model = Model::init(kind, &cfg.model, x, cfg.seed)?;
    train_model(model, scenario, x, cfg)
}

/// Continues training an initialized model.
pub fn train_model(
    mut model: Model,
    scenario: &Scenario,
    x: &MeasurementMatrix,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    cfg.validate()?;
    let prep = model.prepare(x)?;
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drop_rng.set_stream(1);
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..Default::default() }, &model.params.values);
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_finite = None;

    for epoch in 1..=cfg.epochs {
        let mut g = Graph::new();
        let vars = model.params.bind(&mut g);
        let dropout = (cfg.dropout > 0.0).then(|| Dropout { p: cfg.dropout, rng: &mut drop_rng });
        let f = model.forward(&mut g, &vars, &prep, dropout)?;
        let eval_pred = g.value(f.eval).clone();
        let eval_loss = anchor_loss(&eval_pred, scenario);
        let loss = anchor_loss_var(&mut g, f.train.unwrap_or(f.eval), scenario)?;
        let train_loss = g.scalar_value(loss);
        if !train_loss.is_finite() || !eval_loss.is_finite() {
            return Err(TrainError::NonFinite { epoch, last_finite });
        }
        last_finite = Some(eval_loss);
        g.backward(loss)?;
        let grads: Vec<Array2<f64>> = vars
            .iter()
            .zip(&model.params.values)
            .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Array2::zeros(p.dim())))
            .collect();
        drop(g);
        match cfg.optimizer {
            OptimizerKind::Adam => adam_step(&mut model.params.values, &grads, &mut adam)?,
            OptimizerKind::Sgd => sgd_step(&mut model.params.values, &grads, cfg.lr)?,
        }
        history.push(EpochRecord {
            epoch,
            anchor_loss: eval_loss,
            agent_rmse: rmse_agents(&eval_pred, scenario),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let pred = model.predict(&prep)?;
    let final_anchor_loss = anchor_loss(&pred, scenario);
    if !final_anchor_loss.is_finite() {
        return Err(TrainError::NonFinite { epoch: cfg.epochs, last_finite });
    }
    let metrics = MetricsRecord {
        history,
        final_rmse: rmse_agents(&pred, scenario),
        final_anchor_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainedModel { model, metrics })
}
