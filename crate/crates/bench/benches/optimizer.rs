use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use geoplace_core::experiments::{scale_point, ScaleConfig};
use geoplace_core::fixtures::{deathstar_app, deathstar_infra};
use geoplace_core::{e2e_latency, GaConfig};

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("optimize");
    group.sample_size(10);
    let cfg = ScaleConfig { ga: GaConfig { max_generations: 200, patience: 30, parallel: false, ..GaConfig::default() }, ..ScaleConfig::default() };
    for services in [25, 50, 100] {
        group.bench_with_input(BenchmarkId::from_parameter(services), &services, |b, &m| {
            b.iter(|| scale_point(m, &cfg, 1).unwrap())
        });
    }
    group.finish();
}

fn latency(c: &mut Criterion) {
    let dag = deathstar_app().unwrap();
    let infra = deathstar_infra(chrono::Utc::now(), 1).unwrap();
    let lat = vec![5.0; dag.len()];
    let assign: Vec<usize> = (0..dag.len()).map(|i| i % 2).collect();
    c.bench_function("e2e_latency/deathstar", |b| b.iter(|| e2e_latency(&dag, &assign, &lat, &infra.rtt, 0)));
}

criterion_group!(benches, solve, latency);
criterion_main!(benches);
