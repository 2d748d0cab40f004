use std::collections::BTreeMap;
use std::hint::black_box;

use covbal_bench::fixture;
use covbal_core::balance::{balance_table, weighted_ks, SmdDenominator};
use covbal_core::{doubly_robust_effect, fit_method, Estimand, EstimatorConfig, MethodId};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn ks(c: &mut Criterion) {
    let mut g = c.benchmark_group("weighted_ks");
    for n in [1000, 10_000, 100_000] {
        let d = fixture(n);
        let x = d.confounders().unwrap()[0].clone();
        let covbal_core::dataset::ConfounderValues::Continuous(x) = x.values else { unreachable!() };
        let t = d.treatment().unwrap().to_vec();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64 / 7.0).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &(x, t, w), |b, (x, t, w)| {
            b.iter(|| weighted_ks(black_box(x), t, w).unwrap())
        });
    }
    g.finish();
}

fn table_and_effect(c: &mut Criterion) {
    let d = fixture(5000);
    let cfg = EstimatorConfig::default();
    let w = fit_method(&d, MethodId::Lr, Estimand::ATE, &cfg).unwrap();
    let sets = BTreeMap::from([("LR".to_string(), w.clone())]);
    c.bench_function("balance_table/5000", |b| {
        b.iter(|| balance_table(black_box(&d), &sets, Estimand::ATE, SmdDenominator::Weighted).unwrap())
    });
    c.bench_function("doubly_robust/5000", |b| b.iter(|| doubly_robust_effect(black_box(&d), &w, None).unwrap()));
}

criterion_group!(benches, ks, table_and_effect);
criterion_main!(benches);
