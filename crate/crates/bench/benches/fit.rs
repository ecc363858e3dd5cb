use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use memip_bench::{bench_dataset, bench_model};
use memip_core::simulate::simulate_dataset;
use memip_core::memip::memip_fit_features;
use memip_core::{build_event_features, FitOptions};

fn features(c: &mut Criterion) {
    let mut group = c.benchmark_group("features");
    group.sample_size(20);
    for events in [25_000, 50_000, 100_000] {
        let ds = bench_dataset(5, events, 1);
        group.throughput(Throughput::Elements(ds.total_events() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(events), &ds, |b, ds| {
            b.iter(|| build_event_features(ds, 4, 1.0).unwrap())
        });
    }
    group.finish();
}

fn newton(c: &mut Criterion) {
    let mut group = c.benchmark_group("memip_fit");
    group.sample_size(10);
    let ds = bench_dataset(5, 50_000, 2);
    for k_max in [1, 4] {
        let f = build_event_features(&ds, k_max, 1.0).unwrap();
        let opts = FitOptions::new(1.0, k_max);
        group.bench_with_input(BenchmarkId::new("k_max", k_max), &f, |b, f| {
            b.iter(|| memip_fit_features(f, &opts).unwrap())
        });
    }
    group.finish();
}

fn thinning(c: &mut Criterion) {
    let m = bench_model(5);
    c.bench_function("simulate_100_windows", |b| b.iter(|| simulate_dataset(&m, 100, 0.0, 50.0, 3).unwrap()));
}

criterion_group!(benches, features, newton, thinning);
criterion_main!(benches);
