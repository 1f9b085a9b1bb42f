use std::rc::Rc;

use ndarray::Array2;
use netloc::eval::{rmse_agents, Histogram};
use netloc::graphcore::hard_threshold;
use netloc::models::{Model, ModelConfig, ModelKind};
use netloc::num::checkpoint::Checkpoint;
use netloc::num::eig::eig_symmetric;
use netloc::num::{Graph, Pattern};
use netloc::scenario::{generate_scenario, measure_distances, parse_scenario, serialize_scenario, NoiseConfig};
use proptest::prelude::*;

fn small_cfg() -> ModelConfig {
    ModelConfig { hidden: 8, mgal_hidden: 3, heads: 2, f_att: 3, f_a: 3, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn measurements_symmetric_nonnegative(n in 2usize..40, sigma2 in 0.0f64..1.0, p_b in 0.0f64..1.0, seed in any::<u64>()) {
        let s = generate_scenario(n, 1, (5.0, 5.0), seed).unwrap();
        let x = measure_distances(&s, &NoiseConfig::new(sigma2, p_b), seed).unwrap();
        for i in 0..n {
            prop_assert_eq!(x.x[[i, i]], 0.0);
            for j in 0..n {
                prop_assert_eq!(x.x[[i, j]], x.x[[j, i]]);
                prop_assert!(x.x[[i, j]] >= 0.0);
            }
        }
    }

    #[test]
    fn scenario_text_round_trips(n in 2usize..20, seed in any::<u64>()) {
        let s = generate_scenario(n, 1, (3.0, 4.0), seed).unwrap();
        let x = measure_distances(&s, &NoiseConfig::default(), seed).unwrap();
        let (s2, x2) = parse_scenario(&serialize_scenario(&s, &x)).unwrap();
        prop_assert_eq!(s, s2);
        prop_assert_eq!(x, x2);
    }

    #[test]
    fn normalized_adjacency_spectrum(n in 3usize..30, t_h in 0.0f64..6.0, seed in any::<u64>()) {
        let s = generate_scenario(n, 1, (5.0, 5.0), seed).unwrap();
        let x = measure_distances(&s, &NoiseConfig::default(), seed).unwrap();
        let a = hard_threshold(&x, t_h).unwrap().norm_adjacency_dense();
        prop_assert_eq!(&a, &a.t());
        let lap = Array2::<f64>::eye(n) - &a;
        let eig = eig_symmetric(&lap).unwrap();
        for &l in &eig.values {
            prop_assert!((-1e-10..=2.0 + 1e-10).contains(&l), "eigenvalue {}", l);
        }
    }

    #[test]
    fn masked_softmax_rows_sum_to_one(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let vals = Array2::from_shape_fn((rows, cols), |(i, j)| ((seed as f64 + (i * 31 + j * 7) as f64) * 0.37).sin() * 30.0);
        let mask = Array2::from_shape_fn((rows, cols), |(i, j)| j == i % cols || (seed >> ((i + j) % 60)) & 1 == 1);
        let mut g = Graph::new();
        let v = g.constant(vals);
        let p = g.row_softmax(v, Some(Rc::new(mask.clone()))).unwrap();
        let out = g.value(p);
        for i in 0..rows {
            prop_assert!((out.row(i).sum() - 1.0).abs() <= 1e-12);
            for j in 0..cols {
                if !mask[[i, j]] {
                    prop_assert_eq!(out[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn edge_softmax_rows_sum_to_one(n in 1usize..10, seed in any::<u64>()) {
        let pattern = Rc::new(Pattern::from_predicate(n, n, |i, j| i == j || (seed >> ((i * n + j) % 60)) & 1 == 1));
        let scores = Array2::from_shape_fn((pattern.nnz(), 1), |(k, _)| ((k as f64 + 1.0) * 1.7).cos() * 50.0);
        let mut g = Graph::new();
        let sv = g.constant(scores);
        let a = g.edge_softmax(sv, &pattern).unwrap();
        let a = g.value(a);
        for i in 0..n {
            let total: f64 = pattern.row_range(i).map(|k| a[[k, 0]]).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rmse_is_translation_norm(dx in -2.0f64..2.0, dy in -2.0f64..2.0, seed in any::<u64>()) {
        let s = generate_scenario(30, 5, (5.0, 5.0), seed).unwrap();
        let mut p = s.positions.clone();
        for i in 0..30 {
            p[[i, 0]] += dx;
            p[[i, 1]] += dy;
        }
        prop_assert!((rmse_agents(&p, &s) - (dx * dx + dy * dy).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn histogram_keeps_every_value(values in prop::collection::vec(-1.0f64..10.0, 0..200), bins in 1usize..50) {
        let h = Histogram::new(&values, 5.0, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), values.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
    }

    #[test]
    fn checkpoints_round_trip(kind_idx in 0usize..4, seed in any::<u64>()) {
        let s = generate_scenario(12, 3, (3.0, 3.0), seed).unwrap();
        let x = measure_distances(&s, &NoiseConfig::default(), seed).unwrap();
        let kind = ModelKind::ALL[kind_idx];
        let model = Model::init(kind, &small_cfg(), &x, seed).unwrap();
        let bytes = model.to_checkpoint().to_bytes();
        let back = Model::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        prop_assert_eq!(back.to_checkpoint().to_bytes(), bytes);
        let prep = model.prepare(&x).unwrap();
        prop_assert_eq!(model.predict(&prep).unwrap(), back.predict(&prep).unwrap());
    }

    #[test]
    fn truncated_checkpoints_are_rejected(cut in 0usize..64) {
        let s = generate_scenario(6, 2, (3.0, 3.0), 1).unwrap();
        let x = measure_distances(&s, &NoiseConfig::default(), 1).unwrap();
        let bytes = Model::init(ModelKind::Gcn, &small_cfg(), &x, 1).unwrap().to_checkpoint().to_bytes();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}
