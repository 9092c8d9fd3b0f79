use criterion::{criterion_group, criterion_main, Criterion};
use geoplace_bench::traffic;
use geoplace_core::forecast::LAGS;
use geoplace_core::{GbdtConfig, GbdtModel};

fn train(c: &mut Criterion) {
    let trace = traffic(7, 3);
    let mut group = c.benchmark_group("gbdt");
    group.sample_size(10);
    group.bench_function("train/7d", |b| b.iter(|| GbdtModel::train(&trace, &GbdtConfig::default()).unwrap()));
    group.finish();
}

fn predict(c: &mut Criterion) {
    let trace = traffic(7, 3);
    let model = GbdtModel::train(&trace, &GbdtConfig::default()).unwrap();
    let n = trace.len();
    let history = &trace.values()[n - LAGS..];
    let last = trace.time_at(n - 1);
    c.bench_function("gbdt/predict_window", |b| b.iter(|| model.predict_window(history, last).unwrap()));
}

criterion_group!(benches, train, predict);
criterion_main!(benches);
