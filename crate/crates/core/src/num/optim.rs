//! First-order optimizers over lists of dense parameters.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{NumError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for Adam. One pair of moments per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.dim());
        Self {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    fn check(&self, params: &[Tensor], grads: &[Tensor]) -> Result<(), NumError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(NumError::Invalid(format!(
                "optimizer: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, (g, m)) in params.iter().zip(grads.iter().zip(&self.m)) {
            if p.dim() != g.dim() || p.dim() != m.dim() {
                return Err(NumError::Shape { op: "adam_step", lhs: p.dim(), rhs: g.dim() });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<(), NumError> {
    state.check(params, grads)?;
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        });
    }
    Ok(())
}

/// Plain gradient descent, in place.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<(), NumError> {
    if params.len() != grads.len() {
        return Err(NumError::Invalid(format!(
            "optimizer: {} params, {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        if p.dim() != g.dim() {
            return Err(NumError::Shape { op: "sgd_step", lhs: p.dim(), rhs: g.dim() });
        }
        p.scaled_add(-lr, g);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![array![[1.5, -2.0]]];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[array![[0.0, 0.0]]], &mut st).unwrap();
        assert_eq!(p[0], array![[1.5, -2.0]]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = vec![array![[1.0]]];
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut st = AdamState::new(cfg, &p);
        adam_step(&mut p, &[array![[1.0]]], &mut st).unwrap();
        // m_hat = 1, v_hat = 1, step = lr / (1 + eps)
        let expected = 1.0 - 0.01 / (1.0 + 1e-8);
        assert!((p[0][[0, 0]] - expected).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn sgd_matches_hand_update() {
        let mut p = vec![array![[1.0]]];
        sgd_step(&mut p, &[array![[2.0]]], 0.1).unwrap();
        assert!((p[0][[0, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_is_a_pure_transition() {
        let p0 = vec![array![[0.3, -0.7], [1.1, 0.0]]];
        let g = vec![array![[0.5, -1.0], [2.0, 1e-3]]];
        let run = || {
            let mut p = p0.clone();
            let mut st = AdamState::new(AdamConfig::default(), &p);
            for _ in 0..3 {
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![array![[1.0, 2.0]]];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        assert!(adam_step(&mut p, &[array![[1.0]]], &mut st).is_err());
    }
}
