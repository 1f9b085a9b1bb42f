use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netloc::models::ModelKind;
use netloc::train::{loss_and_grad, train, TrainConfig};
use netloc::models::Model;
use netloc_bench::fixture;

fn one_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grad_n500");
    let (s, x) = fixture(500, 0);
    let cfg = TrainConfig::default();
    for kind in ModelKind::ALL {
        let model = Model::init(kind, &cfg.model, &x, 0).unwrap();
        let prep = model.prepare(&x).unwrap();
        group.bench_function(BenchmarkId::from_parameter(kind), |b| {
            b.iter(|| black_box(loss_and_grad(&model, &prep, &s).unwrap().0))
        });
    }
    group.finish();
}

fn short_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_10_epochs_n500");
    let (s, x) = fixture(500, 0);
    let cfg = TrainConfig { epochs: 10, ..Default::default() };
    for kind in [ModelKind::Mlp, ModelKind::Gcn] {
        group.bench_function(BenchmarkId::from_parameter(kind), |b| {
            b.iter(|| black_box(train(kind, &s, &x, &cfg).unwrap().metrics.final_rmse))
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = one_step, short_run
}
criterion_main!(benches);
