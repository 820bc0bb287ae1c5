use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use scalelaw::{akima_fit, estimate_nstar, fit_power_law, InterpMode};
use scalelaw_bench::{bowl_curve, estimates, sizes};

fn akima(c: &mut Criterion) {
    let pts: Vec<(f64, f64)> = sizes(3e7)
        .into_iter()
        .map(|n| (n, 3.0 + 0.08 * (n / 3.3e7).ln().powi(2)))
        .collect();
    c.bench_function("akima_fit_log", |b| {
        b.iter(|| akima_fit(black_box(&pts), InterpMode::LogXLogY).unwrap())
    });
    let spline = akima_fit(&pts, InterpMode::LogXLogY).unwrap();
    c.bench_function("akima_minimize_log", |b| b.iter(|| black_box(&spline).minimize()));
}

fn bootstrap(c: &mut Criterion) {
    let curve = bowl_curve(1e18);
    let mut group = c.benchmark_group("estimate_nstar");
    group.sample_size(20);
    group.bench_function("B=1000", |b| b.iter(|| estimate_nstar(black_box(&curve), 1000, 7).unwrap()));
    group.finish();
}

fn power_law(c: &mut Criterion) {
    let ests = estimates(12);
    c.bench_function("fit_power_law_12", |b| b.iter(|| fit_power_law(black_box(&ests)).unwrap()));
}

criterion_group!(benches, akima, bootstrap, power_law);
criterion_main!(benches);
