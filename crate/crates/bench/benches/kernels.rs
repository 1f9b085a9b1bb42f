use std::hint::black_box;
use std::rc::Rc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netloc::graphcore::{candidate_pattern, hard_threshold, soft_threshold_edges};
use netloc::models::{glorot, mgal_layer, Features, HeadVars};
use netloc::num::Graph;
use netloc_bench::{fixture, random_features};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gcn_layer(c: &mut Criterion) {
    let mut group = c.benchmark_group("gcn_layer");
    for n in [250, 500, 1000] {
        let (_, x) = fixture(n, 0);
        let gs = hard_threshold(&x, 1.2).unwrap();
        let h = random_features(n, 64, 1);
        let w = glorot(64, 64, &mut ChaCha8Rng::seed_from_u64(2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let hv = g.param(h.clone());
                let wv = g.param(w.clone());
                let hw = g.matmul(hv, wv).unwrap();
                let vals = g.column(gs.norm_adjacency.clone());
                let out = g.spmm(&gs.pattern, vals, hw).unwrap();
                let loss = g.sum(out);
                g.backward(loss).unwrap();
                black_box(g.scalar_value(loss))
            })
        });
    }
    group.finish();
}

fn alm1(c: &mut Criterion) {
    let mut group = c.benchmark_group("alm1_soft_threshold");
    for n in [250, 500, 1000] {
        let (_, x) = fixture(n, 0);
        let cand = Rc::new(candidate_pattern(&x, 2.4));
        let x_edges = cand.gather(&x.x);
        let t_raw = Array2::zeros((n, 1));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let t = g.param(t_raw.clone());
                let (soft, _) = soft_threshold_edges(&mut g, &cand, &x_edges, t, 100.0, 2.4).unwrap();
                let loss = g.sum(soft.x_hat);
                g.backward(loss).unwrap();
                black_box(g.scalar_value(loss))
            })
        });
    }
    group.finish();
}

fn mgal(c: &mut Criterion) {
    let mut group = c.benchmark_group("mgal_layer");
    for n in [250, 500] {
        let (_, x) = fixture(n, 0);
        let fine = hard_threshold(&x, 1.2).unwrap().pattern.clone();
        let h = random_features(n, 64, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, w_att, v_att) = (glorot(64, 64, &mut rng), glorot(128, 16, &mut rng), glorot(16, 1, &mut rng));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let hv = g.param(h.clone());
                let head = HeadVars { w: g.param(w.clone()), w_att: g.param(w_att.clone()), v_att: g.param(v_att.clone()) };
                let out = mgal_layer(&mut g, &fine, Features::Dense(hv), &[head], false, 0.2).unwrap();
                let loss = g.sum(out);
                g.backward(loss).unwrap();
                black_box(g.scalar_value(loss))
            })
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = gcn_layer, alm1, mgal
}
criterion_main!(benches);
