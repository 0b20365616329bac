//! Transaction-cost netting benchmarks: the bisection solver and one
//! environment step.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use wavecorr_core::env::{solve_nu, step, CommissionRates, PortfolioWeights};
use wavecorr_core::rng::seed_rng;

fn netting_benches(c: &mut Criterion) {
    let mut rng = seed_rng(11);
    let m = 50usize;
    let simplex = |rng: &mut wavecorr_core::rng::Rng| {
        PortfolioWeights::normalized((0..m).map(|_| rng.uniform() + 1e-9).collect()).unwrap()
    };
    let cases: Vec<(PortfolioWeights, PortfolioWeights)> = (0..64)
        .map(|_| (simplex(&mut rng), simplex(&mut rng)))
        .collect();
    let rates = CommissionRates::new(0.0005, 0.0005).unwrap();

    c.bench_function("solve_nu_m50", |b| {
        let mut k = 0usize;
        b.iter(|| {
            let (wp, wn) = &cases[k % cases.len()];
            k += 1;
            black_box(solve_nu(black_box(wp), black_box(wn), &rates, 1e-10).unwrap())
        })
    });

    let xi: Vec<f64> = (0..m).map(|_| (0.01 * rng.normal()).exp()).collect();
    c.bench_function("env_step_m50", |b| {
        let mut k = 0usize;
        b.iter(|| {
            let (wp, wn) = &cases[k % cases.len()];
            k += 1;
            black_box(step(1.0, black_box(wp), &xi, black_box(wn), &rates).unwrap())
        })
    });
}

criterion_group!(benches, netting_benches);
criterion_main!(benches);
