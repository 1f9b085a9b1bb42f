//! Central finite-difference gradient checks shared by the gradcheck and
//! acceptance targets.

#![allow(dead_code)]

use std::rc::Rc;

use ndarray::Array2;
use netloc::models::{Model, ModelConfig, ModelKind};
use netloc::num::{Graph, Pattern, Var};
use netloc::scenario::{generate_scenario, measure_distances, NoiseConfig};
use netloc::train::loss_and_grad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;
pub const OP_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;

pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let num = norm(&(a - b));
    let den = norm(a).max(norm(b));
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so kinks are not crossed by the
/// perturbation.
pub fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Reduces any node to a scalar through a fixed random projection so every
/// output entry carries a distinct weight.
pub fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let (r, c) = g.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random(r, c, &mut rng));
    let p = g.hadamard(v, w).unwrap();
    g.sum(p)
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// A scalar-valued graph over random inputs.
pub struct OpCase {
    pub name: String,
    pub inputs: Vec<Array2<f64>>,
    pub build: Build,
}

impl OpCase {
    /// Worst relative error between the analytic gradient and central
    /// differences over all inputs.
    pub fn max_rel_err(&self) -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = (self.build)(&mut g, &vars);
        g.backward(out).unwrap();
        let eval = |vals: &[Array2<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
            let out = (self.build)(&mut g, &vars);
            g.scalar_value(out)
        };
        let mut worst: f64 = 0.0;
        for (k, t) in self.inputs.iter().enumerate() {
            let analytic = g.grad(vars[k]).cloned().unwrap_or_else(|| Array2::zeros(t.dim()));
            let mut numeric = Array2::zeros(t.dim());
            let mut vals = self.inputs.clone();
            for r in 0..t.nrows() {
                for c in 0..t.ncols() {
                    let x0 = vals[k][[r, c]];
                    vals[k][[r, c]] = x0 + EPS;
                    let up = eval(&vals);
                    vals[k][[r, c]] = x0 - EPS;
                    let down = eval(&vals);
                    vals[k][[r, c]] = x0;
                    numeric[[r, c]] = (up - down) / (2.0 * EPS);
                }
            }
            worst = worst.max(rel_err(&analytic, &numeric));
        }
        worst
    }
}

fn case(name: &str, inputs: Vec<Array2<f64>>, build: impl Fn(&mut Graph, &[Var]) -> Var + 'static) -> OpCase {
    OpCase { name: name.into(), inputs, build: Box::new(build) }
}

/// One case per differentiable op family, plus random three-layer
/// compositions.
pub fn op_cases() -> Vec<OpCase> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    out.push(case(
        "matmul_add_sub_hadamard_scale",
        vec![random(3, 4, &mut rng), random(4, 2, &mut rng), random(3, 2, &mut rng)],
        |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let a = g.add(m, v[2]).unwrap();
            let s = g.sub(a, v[2]).unwrap();
            let h = g.hadamard(s, v[2]).unwrap();
            let h = g.scale(h, 1.7);
            let h = g.offset(h, 0.3);
            project(g, h, 2)
        },
    ));

    let pattern = Rc::new(Pattern::from_rows(5, &[vec![0, 2], vec![1, 3, 4], vec![], vec![0, 4]]).unwrap());
    let p = pattern.clone();
    out.push(case("spmm", vec![random(pattern.nnz(), 1, &mut rng), random(5, 3, &mut rng)], move |g, v| {
        let y = g.spmm(&p, v[0], v[1]).unwrap();
        project(g, y, 4)
    }));

    let idx = Rc::new(vec![3, 0, 0, 4, 2]);
    out.push(case(
        "broadcast_concat_slice_gather_transpose",
        vec![random(4, 3, &mut rng), random(4, 1, &mut rng), random(2, 3, &mut rng)],
        move |g, v| {
            let a = g.add_col(v[0], v[1]).unwrap();
            let m = g.mul_col(a, v[1]).unwrap();
            let rows = g.concat_rows(&[m, v[2]]).unwrap();
            let sl = g.slice_rows(rows, 1, 6).unwrap();
            let cols = g.concat_cols(&[sl, sl]).unwrap();
            let ga = g.gather_rows(cols, &idx).unwrap();
            let t = g.transpose(ga);
            project(g, t, 6)
        },
    ));

    out.push(case("abs_relu_tanh_sigmoid_leaky_relu", vec![away_from_zero(3, 5, &mut rng)], |g, v| {
        let a = g.abs(v[0]);
        let r = g.relu(v[0]);
        let t = g.tanh(v[0]);
        let s = g.sigmoid(v[0]);
        let l = g.leaky_relu(v[0], 0.2);
        let x = g.add(a, r).unwrap();
        let x = g.add(x, t).unwrap();
        let x = g.hadamard(x, s).unwrap();
        let x = g.add(x, l).unwrap();
        project(g, x, 8)
    }));

    let mask = Rc::new(Array2::from_shape_fn((4, 5), |(i, j)| (i + j) % 3 != 0));
    out.push(case("row_softmax_row_max_frobenius", vec![random(4, 5, &mut rng)], move |g, v| {
        let s = g.row_softmax(v[0], None).unwrap();
        let m = g.row_softmax(v[0], Some(mask.clone())).unwrap();
        let x = g.add(s, m).unwrap();
        let mx = g.row_max(v[0]).unwrap();
        let f = g.frobenius_sq(x);
        let p = project(g, mx, 10);
        let q = project(g, x, 11);
        let y = g.add(f, p).unwrap();
        g.add(y, q).unwrap()
    }));

    let n = 6;
    let ep = Rc::new(Pattern::from_predicate(n, n, |i, j| i == j || (i * 7 + j * 3) % 4 == 0));
    let nnz = ep.nnz();
    out.push(case(
        "edge_broadcast_softmax_scores_scatter",
        vec![
            random(n, 1, &mut rng),
            random(nnz, 1, &mut rng),
            random(n, 3, &mut rng),
            random(n, 3, &mut rng),
            random(3, 1, &mut rng),
        ],
        move |g, v| {
            let b = g.edge_row_broadcast(v[0], &ep).unwrap();
            let e = g.hadamard(b, v[1]).unwrap();
            let a = g.edge_softmax(e, &ep).unwrap();
            let ps = g.edge_pair_score(v[2], v[3], v[4], &ep, 0.2).unwrap();
            let ad = g.edge_abs_diff_score(v[2], v[4], &ep).unwrap();
            let x = g.hadamard(a, ps).unwrap();
            let x = g.add(x, ad).unwrap();
            let d = g.edge_scatter(x, &ep).unwrap();
            project(g, d, 12)
        },
    ));

    let dmask = Rc::new(Array2::from_shape_fn((3, 4), |(i, j)| if (i + j) % 2 == 0 { 2.0 } else { 0.0 }));
    out.push(case("dropout_fixed_mask", vec![random(3, 4, &mut rng)], move |g, v| {
        let d = g.dropout_with_mask(v[0], dmask.clone()).unwrap();
        project(g, d, 14)
    }));

    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        out.push(case(
            &format!("composition_{seed}"),
            vec![random(5, 4, &mut rng), random(4, 6, &mut rng), random(6, 3, &mut rng), random(6, 1, &mut rng)],
            move |g, v| {
                let h = g.matmul(v[0], v[1]).unwrap();
                let h = g.tanh(h);
                let h = g.matmul(h, v[2]).unwrap();
                let h = g.sigmoid(h);
                let s = g.row_softmax(h, None).unwrap();
                let t = g.transpose(s);
                let t = g.mul_col(t, v[3]).unwrap_or(t);
                let f = g.frobenius_sq(t);
                let p = project(g, h, seed);
                g.add(f, p).unwrap()
            },
        ));
    }
    out
}

/// Worst relative error per parameter tensor of the full anchor loss of
/// `kind`, dropout off, on a small scenario.
pub fn end_to_end_rel_err(kind: ModelKind) -> f64 {
    let s = generate_scenario(24, 6, (3.0, 3.0), 21).unwrap();
    let x = measure_distances(&s, &NoiseConfig::new(0.04, 0.1), 21).unwrap();
    let cfg = ModelConfig {
        hidden: 6,
        mgal_hidden: 3,
        heads: 2,
        f_att: 3,
        f_a: 3,
        t_h: 1.2,
        t_h0: 2.0,
        gamma: 10.0,
        ..Default::default()
    };
    let model = Model::init(kind, &cfg, &x, 3).unwrap();
    let prep = model.prepare(&x).unwrap();
    let (_, grads) = loss_and_grad(&model, &prep, &s).unwrap();
    let mut worst: f64 = 0.0;
    for (k, grad) in grads.iter().enumerate() {
        let mut numeric = Array2::zeros(grad.dim());
        let mut m = model.clone();
        for r in 0..grad.nrows() {
            for c in 0..grad.ncols() {
                let x0 = m.params.values[k][[r, c]];
                m.params.values[k][[r, c]] = x0 + EPS;
                let (up, _) = loss_and_grad(&m, &prep, &s).unwrap();
                m.params.values[k][[r, c]] = x0 - EPS;
                let (down, _) = loss_and_grad(&m, &prep, &s).unwrap();
                m.params.values[k][[r, c]] = x0;
                numeric[[r, c]] = (up - down) / (2.0 * EPS);
            }
        }
        worst = worst.max(rel_err(grad, &numeric));
    }
    worst
}
