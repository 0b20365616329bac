//! Policy-network forward benchmarks: single-window vs multi-period passes,
//! and the training-step gradient.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use wavecorr_core::data::{generate_synthetic, to_relatives, SplitId, Splits, SynthConfig};
use wavecorr_core::env::PortfolioWeights;
use wavecorr_core::policy::{ForwardMode, PolicyParams, PolicySpec};
use wavecorr_core::rng::seed_rng;
use wavecorr_core::tensor::Tensor3;
use wavecorr_core::trainer::{episode_gradient, EpisodeState, TrainConfig};

fn forward_benches(c: &mut Criterion) {
    let (m, h, t_steps) = (10usize, 32usize, 32usize);
    let params = PolicyParams::init(PolicySpec::default_structure(m, h, 1).unwrap(), 1).unwrap();
    let mut rng = seed_rng(2);
    let len = h + t_steps - 1;
    let features = Tensor3::random_normal(m, len, 1, 0.3, &mut rng);
    let mut raw = Tensor3::zeros(m, len, 1);
    for i in 0..m {
        for j in 0..len {
            raw.set(i, j, 0, (0.01 * rng.normal()).exp());
        }
    }
    let prev = PortfolioWeights::uniform(m);

    let mut group = c.benchmark_group("forward");
    group.bench_function(
        BenchmarkId::new("single_window", format!("m{m}_h{h}")),
        |b| {
            let window = features.time_slice(0, h).unwrap();
            b.iter(|| {
                black_box(
                    params
                        .forward_policy(black_box(&window), &prev, ForwardMode::Eval)
                        .unwrap(),
                )
            })
        },
    );
    group.bench_function(
        BenchmarkId::new("augmented", format!("m{m}_h{h}_T{t_steps}")),
        |b| {
            b.iter(|| {
                black_box(
                    params
                        .forward_augmented(
                            black_box(&features),
                            Some(&raw),
                            &prev,
                            t_steps,
                            ForwardMode::Eval,
                        )
                        .unwrap(),
                )
            })
        },
    );
    group.bench_function(
        BenchmarkId::new("sequential_windows", format!("m{m}_h{h}_T{t_steps}")),
        |b| {
            b.iter(|| {
                let mut prev_w = prev.clone();
                for t in 0..t_steps {
                    let window = features.time_slice(t, h).unwrap();
                    let w = params
                        .forward_policy(&window, &prev_w, ForwardMode::Eval)
                        .unwrap();
                    if t + 1 < t_steps {
                        let xi: Vec<f64> = (0..m).map(|i| raw.get(i, t + h, 0)).collect();
                        prev_w = wavecorr_core::env::drift_weights(&w, &xi).unwrap();
                    }
                    black_box(&w);
                }
            })
        },
    );
    group.finish();

    let synth = SynthConfig::iid(m, 400, 0.0002, 0.012, 3);
    let table = generate_synthetic(&synth).unwrap();
    let window = to_relatives(&table).unwrap();
    let n = window.len();
    let window = window
        .with_splits(Splits::from_fractions(n, 0.8, 0.1).unwrap())
        .unwrap();
    let cfg = TrainConfig {
        dropout_rate: 0.0,
        ..TrainConfig::default()
    };
    let episode = EpisodeState {
        cursor: 0,
        carry_weights: PortfolioWeights::uniform(m),
    };
    c.bench_function("episode_gradient_m10_h32_T32", |b| {
        b.iter(|| {
            black_box(
                episode_gradient(&params, &window, &episode, &cfg, SplitId::Train, None).unwrap(),
            )
        })
    });
}

criterion_group!(benches, forward_benches);
criterion_main!(benches);
