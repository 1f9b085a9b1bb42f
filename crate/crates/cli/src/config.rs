//! Flat key-value run configuration: defaults, an optional TOML file and
//! command-line overrides, merged in that order.

use std::collections::BTreeMap;
use std::path::Path;

use netloc::eval::Condition;
use netloc::models::ModelConfig;
use netloc::scenario::NoiseConfig;
use netloc::train::{OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub anchors: usize,
    pub area: [f64; 2],
    pub sigma2: f64,
    pub p_b: f64,
    pub nlos_low: f64,
    pub nlos_high: f64,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub dropout: f64,
    pub layers: usize,
    pub hidden: usize,
    pub mgal_hidden: usize,
    pub heads: usize,
    pub f_att: usize,
    pub f_a: usize,
    pub t_h: f64,
    pub t_h0: f64,
    pub gamma: f64,
    /// 0 selects the default ceiling of `2 * t_h`.
    pub l_max: f64,
    pub t_init_std: f64,
    pub leaky_slope: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        let noise = NoiseConfig::default();
        Self {
            seed: t.seed,
            seeds: vec![0, 1, 2, 3, 4],
            n: 500,
            anchors: 50,
            area: [5.0, 5.0],
            sigma2: noise.sigma2,
            p_b: noise.p_b,
            nlos_low: noise.nlos_low,
            nlos_high: noise.nlos_high,
            epochs: t.epochs,
            lr: t.lr,
            optimizer: t.optimizer,
            dropout: t.dropout,
            layers: m.layers,
            hidden: m.hidden,
            mgal_hidden: m.mgal_hidden,
            heads: m.heads,
            f_att: m.f_att,
            f_a: m.f_a,
            t_h: m.t_h,
            t_h0: m.t_h0,
            gamma: m.gamma,
            l_max: m.l_max.unwrap_or(0.0),
            t_init_std: m.t_init_std,
            leaky_slope: m.leaky_slope,
        }
    }
}

const DOCS: &[(&str, &str)] = &[
    ("seed", "seed for scenario, measurements and training"),
    ("seeds", "seed list for experiments"),
    ("n", "number of nodes"),
    ("anchors", "number of anchors (the first nodes)"),
    ("area", "deployment area [width, height] in meters"),
    ("sigma2", "LOS noise variance (m^2)"),
    ("p_b", "NLOS probability"),
    ("nlos_low", "lower bound of the NLOS bias (m)"),
    ("nlos_high", "upper bound of the NLOS bias (m)"),
    ("epochs", "training epochs"),
    ("lr", "learning rate"),
    ("optimizer", "adam or sgd"),
    ("dropout", "dropout rate on hidden activations"),
    ("layers", "number of layers"),
    ("hidden", "GCN/MLP hidden width"),
    ("mgal_hidden", "hidden width per attention head"),
    ("heads", "attention heads"),
    ("f_att", "MGAL attention width"),
    ("f_a", "ALM-II attention width"),
    ("t_h", "hard threshold (m)"),
    ("t_h0", "ALM-II coarse threshold (m)"),
    ("gamma", "slope of the approximating step function"),
    ("l_max", "ALM-I threshold ceiling (m), 0 = 2 * t_h"),
    ("t_init_std", "std of the random ALM-I threshold init"),
    ("leaky_slope", "attention LeakyReLU slope"),
];

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let defaults = Table::try_from(RunConfig::default()).expect("defaults serialize");
    let mut out = String::from("Configuration keys (--config FILE, --set KEY=VALUE):\n");
    for (k, doc) in DOCS {
        let v = defaults.get(*k).map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("  {k:<12} {doc} [default: {v}]\n"));
    }
    out
}

/// Parses the right-hand side of `KEY=VALUE` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Layers defaults, file and overrides. `flags` come from dedicated
/// command-line options; `sets` from `--set KEY=VALUE`. The same key given
/// by both with different values is a conflict.
#[derive(Default)]
pub struct Overrides {
    pub flags: BTreeMap<String, Value>,
    pub sets: Vec<String>,
}

impl Overrides {
    pub fn flag(&mut self, key: &str, v: Option<impl Into<Value>>) {
        if let Some(v) = v {
            self.flags.insert(key.to_string(), v.into());
        }
    }
}

pub fn load(file: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            text.parse::<Table>().map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    let mut set_values = BTreeMap::new();
    for s in &ov.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        set_values.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    for (k, v) in &ov.flags {
        if let Some(other) = set_values.get(k) {
            if other != v {
                return Err(CliError::config(format!("conflicting values for {k}: flag {v} vs --set {other}")));
            }
        }
    }
    table.extend(set_values);
    table.extend(ov.flags.clone());
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.noise().validate().map_err(|e| CliError::config(e.to_string()))?;
        self.train().validate().map_err(|e| CliError::config(e.to_string()))?;
        if self.anchors == 0 || self.anchors >= self.n {
            return Err(CliError::config(format!("anchors must lie in 1..{}, got {}", self.n, self.anchors)));
        }
        if !(self.area[0] > 0.0 && self.area[1] > 0.0) {
            return Err(CliError::config("area sides must be > 0"));
        }
        if self.l_max < 0.0 {
            return Err(CliError::config("l_max must be >= 0"));
        }
        Ok(())
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig { sigma2: self.sigma2, p_b: self.p_b, nlos_low: self.nlos_low, nlos_high: self.nlos_high }
    }

    pub fn condition(&self) -> Condition {
        Condition::new(self.sigma2, self.p_b)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            optimizer: self.optimizer,
            dropout: self.dropout,
            seed: self.seed,
            model: ModelConfig {
                layers: self.layers,
                hidden: self.hidden,
                mgal_hidden: self.mgal_hidden,
                heads: self.heads,
                f_att: self.f_att,
                f_a: self.f_a,
                t_h: self.t_h,
                t_h0: self.t_h0,
                gamma: self.gamma,
                l_max: (self.l_max > 0.0).then_some(self.l_max),
                t_init_std: self.t_init_std,
                leaky_slope: self.leaky_slope,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_field_documented() {
        let t = Table::try_from(RunConfig::default()).unwrap();
        assert_eq!(t.len(), DOCS.len());
        for (k, _) in DOCS {
            assert!(t.contains_key(*k), "{k}");
        }
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.train(), TrainConfig::default());
    }

    #[test]
    fn overrides_and_conflicts() {
        let mut ov = Overrides { sets: vec!["epochs=7".into(), "optimizer=sgd".into()], ..Default::default() };
        ov.flag("seed", Some(3i64));
        let c = load(None, &ov).unwrap();
        assert_eq!((c.epochs, c.optimizer, c.seed), (7, OptimizerKind::Sgd, 3));
        ov.sets.push("seed=4".into());
        assert!(matches!(load(None, &ov), Err(e) if e.code() == 4));
        let bad = Overrides { sets: vec!["bogus=1".into()], ..Default::default() };
        assert_eq!(load(None, &bad).unwrap_err().code(), 4);
        let bad = Overrides { sets: vec!["noequals".into()], ..Default::default() };
        assert_eq!(load(None, &bad).unwrap_err().code(), 2);
    }
}
