use ndarray::Array2;
use netloc::analysis::*;
use netloc::graphcore::hard_threshold;
use netloc::num::Pattern;
use netloc::scenario::{generate_scenario, measure_distances, NoiseConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn graph(n: usize, t_h: f64, seed: u64) -> netloc::graphcore::GraphStructure {
    let s = generate_scenario(n, 1, (5.0, 5.0), seed).unwrap();
    let x = measure_distances(&s, &NoiseConfig::default(), seed).unwrap();
    hard_threshold(&x, t_h).unwrap()
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

#[test]
fn half_inverse_stepsize_gives_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..20 {
        let gs = graph(25, 1.5, seed);
        let a = gs.norm_adjacency_dense();
        let s = gaussian(25, 4, &mut rng);
        let c = rng.random_range(0.2..4.0);
        let step = denoise_gd_step_global(&s, &a, c, 1.0 / (2.0 * c)).unwrap();
        assert!(max_abs(&(&step - &a.dot(&s))) <= 1e-12);
    }
}

#[test]
fn global_step_matches_entrywise_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 30;
    let gs = graph(n, 1.4, 9);
    let a = gs.norm_adjacency_dense();
    let s = gaussian(n, 3, &mut rng);
    let (c, b) = (1.0, 0.1);
    let step = denoise_gd_step_global(&s, &a, c, b).unwrap();
    // d/dS' [ ||S'-S||^2 + c tr(S'^T L S') ] at S' = S is 2c (L S) with L = I - A_hat.
    let mut expected = s.clone();
    for i in 0..n {
        for d in 0..3 {
            let mut ls = s[[i, d]];
            for j in 0..n {
                ls -= a[[i, j]] * s[[j, d]];
            }
            expected[[i, d]] -= b * 2.0 * c * ls;
        }
    }
    assert!(max_abs(&(&step - &expected)) <= 1e-12);
    let lap = Array2::<f64>::eye(n) - &a;
    let grad = denoise_gradient_global(&s, &s, &lap, c).unwrap();
    assert!(max_abs(&(&(&s - &(&grad * b)) - &step)) <= 1e-12);
}

#[test]
fn adaptive_step_matches_unsimplified_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..10 {
        let gs = graph(30, 1.3, 100 + seed);
        let p = &gs.pattern;
        let n = p.nrows();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let s = gaussian(n, 2, &mut rng);
        let out = denoise_gd_step_adaptive(&s, p, &c).unwrap();
        for i in 0..n {
            assert!((out.coefficient_sums[i] - 1.0).abs() <= 1e-12);
            let b = out.steps[i];
            let total: f64 = p.row(i).iter().map(|&j| c[i] + c[j]).sum();
            let mut row = s.row(i).to_owned() * (1.0 - b * total);
            for &j in p.row(i) {
                row.scaled_add(b * (c[i] + c[j]), &s.row(j));
            }
            for d in 0..2 {
                assert!((row[d] - out.s_prime[[i, d]]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn constant_signal_sits_at_lowest_frequency_on_regular_graph() {
    let n = 12;
    let rows: Vec<Vec<usize>> = (0..n).map(|i| {
        let mut r = vec![(i + n - 1) % n, i, (i + 1) % n];
        r.sort_unstable();
        r
    }).collect();
    let p = Pattern::from_rows(n, &rows).unwrap();
    let a = p.scatter(&vec![1.0 / 3.0; p.nnz()]);
    let sig = Array2::from_elem((n, 1), 1.0);
    let rep = spectral_analysis(&a, &sig, 2).unwrap();
    let total: f64 = rep.mag_before.iter().map(|m| m * m).sum();
    assert!((rep.mag_before[0].powi(2) / total - 1.0).abs() < 1e-10);
    assert!(rep.lambda[0].abs() < 1e-10);
}

#[test]
fn zero_rounds_leave_spectrum_unchanged() {
    let gs = graph(40, 1.2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sig = gaussian(40, 3, &mut rng);
    let rep = spectral_analysis(&gs.norm_adjacency_dense(), &sig, 0).unwrap();
    for (a, b) in rep.mag_before.iter().zip(&rep.mag_after) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!(rep.g.iter().all(|&g| g == 1.0));
    assert!(rep.path_gap() < 1e-8);
    assert!(rep.to_csv().starts_with("lambda,mag_before,mag_after,g\n"));
}

#[test]
fn asymmetric_operator_is_rejected() {
    let a = ndarray::array![[0.5, 0.1], [0.3, 0.5]];
    let sig = Array2::ones((2, 1));
    assert!(spectral_analysis(&a, &sig, 1).is_err());
}

#[test]
fn los_noise_high_band_is_suppressed() {
    let s = generate_scenario(500, 50, (5.0, 5.0), 0).unwrap();
    let x = measure_distances(&s, &NoiseConfig::new(0.1, 0.0), 0).unwrap();
    let noise = &x.x - &s.true_distances();
    let a = hard_threshold(&x, 1.2).unwrap().norm_adjacency_dense();
    let rep = spectral_analysis(&a, &noise, 2).unwrap();
    assert!(rep.lambda.iter().all(|&l| (-1e-10..=2.0 + 1e-10).contains(&l)));
    let ratio = rep.band_energy_ratio(1.0);
    assert!(ratio < 0.1, "high-band energy ratio {ratio}");
    assert!(rep.path_gap() < 1e-8);
}

#[test]
fn static_scorer_has_one_winner() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = gaussian(10, 5, &mut rng);
    let w = gaussian(5, 3, &mut rng);
    let v = gaussian(6, 1, &mut rng);
    let am = static_attention_probe(&w, &v, &h, 0.2).unwrap();
    assert!(am.iter().all(|&j| j == am[0]));
    for _ in 0..100 {
        let h = gaussian(20, 5, &mut rng);
        let w = gaussian(5, 3, &mut rng);
        let v = gaussian(6, 1, &mut rng);
        let am = static_attention_probe(&w, &v, &h, 0.2).unwrap();
        assert!(am.iter().all(|&j| j == am[0]));
    }
}

#[test]
fn trained_scorer_learns_identity_and_derangement() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = gaussian(5, 5, &mut rng);
    let id = dynamic_attention_probe(&[0, 1, 2, 3, 4], &h, &ProbeConfig::default()).unwrap();
    assert_eq!(id.satisfied, 5);
    let target = random_derangement(5, &mut rng);
    let rep = dynamic_attention_probe(&target, &h, &ProbeConfig { seed: 1, ..Default::default() }).unwrap();
    assert!(rep.satisfied >= 4, "{rep:?}");
    let w = gaussian(5, 4, &mut rng);
    let v = gaussian(8, 1, &mut rng);
    let am = static_attention_probe(&w, &v, &h, 0.2).unwrap();
    assert!((0..5).filter(|&i| am[i] == target[i]).count() <= 1);
}

#[test]
fn alm2_scores_symmetric_with_query_dependent_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = generate_scenario(25, 1, (5.0, 5.0), 8).unwrap();
    let x = s.true_distances();
    let mut varied = 0;
    for _ in 0..10 {
        let w = gaussian(25, 6, &mut rng);
        let v = gaussian(6, 1, &mut rng);
        let e = alm2_score_matrix(&x, &w, &v, 0.2).unwrap();
        assert_eq!(e, e.t());
        let am = alm2_argmax(&e);
        if am.iter().any(|&j| j != am[0]) {
            varied += 1;
        }
    }
    assert!(varied > 0);
}

#[test]
fn theorem_report_passes() {
    let rep = verify_theorems(0).unwrap();
    let text = rep.to_text();
    assert!(rep.all_passed(), "{text}");
    assert_eq!(text.lines().count(), rep.checks.len());
}

#[test]
fn identity_graph_aggregation_is_transform_only() {
    let fit = bench_gcn_layer(200, &[0.0], 32, 16, 5, 0).unwrap();
    assert_eq!(fit.sizes, vec![200.0]);
    assert!(fit.seconds[0] > 0.0);
}
