use std::hint::black_box;

use covbal_bench::fixture;
use covbal_core::estimators::GbmParams;
use covbal_core::{fit_method, run_all, Estimand, EstimatorConfig, MethodId};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn single_methods(c: &mut Criterion) {
    let cfg = EstimatorConfig::default();
    let mut g = c.benchmark_group("fit");
    for n in [1000, 5000] {
        let d = fixture(n);
        for m in [MethodId::Lr, MethodId::Cbps(2), MethodId::Eb(1), MethodId::Eb(3)] {
            g.bench_with_input(BenchmarkId::new(m.to_string(), n), &d, |b, d| {
                b.iter(|| fit_method(black_box(d), m, Estimand::ATE, &cfg).unwrap())
            });
        }
    }
    g.finish();
}

fn boosting(c: &mut Criterion) {
    let cfg = EstimatorConfig { gbm: GbmParams { max_trees: 1000, ..GbmParams::default() }, ..EstimatorConfig::default() };
    let d = fixture(2000);
    let mut g = c.benchmark_group("gbm");
    g.sample_size(10);
    g.bench_function("GBM_KS/2000x1000", |b| b.iter(|| fit_method(black_box(&d), MethodId::GbmKs, Estimand::ATE, &cfg).unwrap()));
    g.finish();
}

fn all_nine(c: &mut Criterion) {
    let d = fixture(1000);
    let cfg = EstimatorConfig::default();
    let mut g = c.benchmark_group("run_all");
    g.sample_size(10);
    g.bench_function("1000", |b| b.iter(|| run_all(black_box(&d), Estimand::ATE, &cfg, None).unwrap()));
    g.finish();
}

criterion_group!(benches, single_methods, boosting, all_nine);
criterion_main!(benches);
