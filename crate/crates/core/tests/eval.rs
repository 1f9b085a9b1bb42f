use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use netloc::eval::*;
use netloc::models::{Model, ModelConfig, ModelKind};
use netloc::scenario::{generate_scenario, measure_distances, NoiseConfig, Scenario};
use netloc::train::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_train() -> TrainConfig {
    TrainConfig {
        epochs: 15,
        model: ModelConfig { hidden: 32, mgal_hidden: 8, heads: 2, f_att: 4, f_a: 4, ..Default::default() },
        ..Default::default()
    }
}

fn small_spec(name: &str, models: Vec<ModelKind>) -> ExperimentSpec {
    ExperimentSpec {
        nodes: vec![60],
        anchors: vec![10],
        area: (5.0, 5.0),
        train: small_train(),
        ..ExperimentSpec::base(name, models, vec![Condition::new(0.1, 0.1)], vec![0, 1])
    }
}

#[test]
fn rmse_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = generate_scenario(80, 12, (5.0, 5.0), 3).unwrap();
    let pred = Array2::from_shape_fn((80, 2), |(i, d)| s.positions[[i, d]] + rng.random_range(-1.0..1.0));
    let mut acc = 0.0;
    for i in s.agents() {
        let dx = pred[[i, 0]] - s.positions[[i, 0]];
        let dy = pred[[i, 1]] - s.positions[[i, 1]];
        acc += dx * dx + dy * dy;
    }
    let oracle = (acc / s.n_agents() as f64).sqrt();
    assert!((rmse_agents(&pred, &s) - oracle).abs() <= 1e-12);
}

#[test]
fn every_agent_off_by_three_four_gives_half() {
    let s: Scenario = generate_scenario(30, 5, (5.0, 5.0), 1).unwrap();
    let mut p = s.positions.clone();
    for i in s.agents() {
        p[[i, 0]] += 0.3;
        p[[i, 1]] -= 0.4;
    }
    assert!((rmse_agents(&p, &s) - 0.5).abs() <= 1e-12);
}

#[test]
fn experiment_records_every_cell_and_reruns_bit_exactly() {
    let spec = small_spec("det", vec![ModelKind::Mlp, ModelKind::Gcn, ModelKind::Agnn1, ModelKind::Agnn2]);
    let seen = AtomicUsize::new(0);
    let table = run_experiment(&spec, 2, &|_| {
        seen.fetch_add(1, Ordering::SeqCst);
    })
    .unwrap();
    assert_eq!(table.results.len(), 8);
    assert_eq!(seen.load(Ordering::SeqCst), 8);
    assert_eq!(table.failures().count(), 0);

    let aggs = table.aggregate();
    assert_eq!(aggs.len(), 4);
    for a in &aggs {
        let xs: Vec<f64> = table
            .results
            .iter()
            .filter(|r| r.cell.model == a.model)
            .map(|r| r.outcome.as_ref().unwrap().rmse)
            .collect();
        let m = (xs[0] + xs[1]) / 2.0;
        let sd = (((xs[0] - m).powi(2) + (xs[1] - m).powi(2)) / 1.0).sqrt();
        assert!((a.mean - m).abs() < 1e-12 && (a.std - sd).abs() < 1e-12);
        assert_eq!(a.n_ok, 2);
    }

    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let dir = write_experiment(root, &spec, &table).unwrap();
    for f in ["metadata.json", "config.json", "cells.csv", "summary.csv", "timing.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    for r in &table.results {
        let stored = std::fs::read_to_string(dir.join(cell_path(&r.cell))).unwrap();
        let again = rerun_cell(&dir.join("metadata.json"), r.cell.model, &r.cell.label(), r.cell.seed).unwrap();
        assert_eq!(stored, again, "{} {}", r.cell.model, r.cell.label());
    }
    let serial = run_experiment(&spec, 1, &|_| {}).unwrap();
    assert_eq!(serial.cells_csv(), table.cells_csv());
}

#[test]
fn tampered_metadata_is_rejected() {
    let spec = small_spec("tamper", vec![ModelKind::Mlp]);
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let table = ResultTable { experiment: spec.name.clone(), results: vec![] };
    let dir = write_experiment(root, &spec, &table).unwrap();
    let path = dir.join("metadata.json");
    let text = std::fs::read_to_string(&path).unwrap().replace("\"epochs\": 15", "\"epochs\": 16");
    std::fs::write(&path, text).unwrap();
    assert!(Metadata::read(&path).is_err());
    assert!(rerun_cell(&path, ModelKind::Mlp, "nope", 0).is_err());
}

#[test]
fn failed_cells_are_recorded_and_run_continues() {
    let mut spec = small_spec("fail", vec![ModelKind::Gcn]);
    spec.thresholds = vec![1.2, -1.0];
    let table = run_experiment(&spec, 1, &|_| {}).unwrap();
    assert_eq!(table.results.len(), 4);
    assert_eq!(table.failures().count(), 2);
    assert!(table.cells_csv().contains("failed: "));
    let aggs = table.aggregate();
    assert_eq!(aggs.iter().map(|a| a.n_failed).sum::<usize>(), 2);
    assert!(table.to_text().contains("failed"));
}

#[test]
fn untrained_thresholds_spike_at_half_l_max() {
    let s = generate_scenario(50, 8, (5.0, 5.0), 2).unwrap();
    let x = measure_distances(&s, &NoiseConfig::default(), 2).unwrap();
    let cfg = ModelConfig { t_init_std: 0.0, mgal_hidden: 4, heads: 1, f_att: 2, f_a: 2, ..Default::default() };
    let model = Model::init(ModelKind::Agnn1, &cfg, &x, 0).unwrap();
    let h = export_threshold_histogram(&model, 30).unwrap();
    assert_eq!(h.counts.iter().sum::<usize>(), 50);
    assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    let k = h.counts.iter().position(|&c| c > 0).unwrap();
    assert!(h.edges[k] <= model.l_max / 2.0 && model.l_max / 2.0 < h.edges[k + 1]);
    assert!(h.to_csv().starts_with("bin_lo,bin_hi,count\n"));
    let gcn = Model::init(ModelKind::Gcn, &cfg, &x, 0).unwrap();
    assert!(export_threshold_histogram(&gcn, 30).is_err());
}

#[test]
fn trained_thresholds_spread() {
    let s = generate_scenario(60, 10, (5.0, 5.0), 4).unwrap();
    let x = measure_distances(&s, &NoiseConfig::default(), 4).unwrap();
    let t = train(ModelKind::Agnn1, &s, &x, &TrainConfig { seed: 4, ..small_train() }).unwrap();
    let th = learned_thresholds(&t.model).unwrap();
    let m = th.iter().sum::<f64>() / th.len() as f64;
    let sd = (th.iter().map(|v| (v - m).powi(2)).sum::<f64>() / th.len() as f64).sqrt();
    assert!(sd > 0.0);
    assert!(th.iter().all(|&v| (0.0..=t.model.l_max).contains(&v)));
}

#[test]
fn heatmaps_respect_coarse_set_and_ranges() {
    let s = generate_scenario(60, 10, (5.0, 5.0), 5).unwrap();
    let x = measure_distances(&s, &NoiseConfig::default(), 5).unwrap();
    let t = train(ModelKind::Agnn2, &s, &x, &TrainConfig { seed: 5, ..small_train() }).unwrap();
    let rows = export_attention_heatmaps(&t.model, &x, &[10, 20]).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let rowmax = x.x.row(r.node).iter().fold(0.0f64, |m, &v| m.max(v));
        for j in 0..60 {
            if !r.coarse[j] {
                assert_eq!(r.a[j], 0.0);
                assert_eq!(r.t[j], 0.0);
            }
            assert!((0.0..=1.0).contains(&r.a[j]));
            assert!(r.t[j] >= 0.0 && r.t[j] <= rowmax + 1e-12);
        }
    }
    let csv = heatmaps_csv(&rows);
    assert!(csv.starts_with("node,j,coarse,a,t_a\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 60);
    assert!(export_attention_heatmaps(&t.model, &x, &[60]).is_err());
    assert!(export_attention_heatmaps(&t.model, &x, &[]).unwrap().is_empty());
}
