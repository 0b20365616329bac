//! Runnable property suites for the library's structural guarantees: the
//! bisection bracket and monotonicity, correlation-layer and whole-network
//! permutation invariance, the cross-asset-convolution counterexample, the
//! multi-period/sequential equivalence and speedup, and full-parameter
//! gradient correctness.
//!
//! Each suite returns named pass/fail checks so the command-line `verify`
//! subcommand and the acceptance tests share one implementation.

use crate::blocks::{
    corr_layer, corr_layer_stacked, corr_weight_witness, permute_assets, unpermute_assets,
    AssetPermutation, CorrSpec, ZhangCorrSpec,
};
use crate::data::{generate_synthetic, to_relatives, Splits, SynthConfig};
use crate::env::{netting_gap, solve_nu, CommissionRates, PortfolioWeights};
use crate::error::Result;
use crate::policy::{ForwardMode, PolicyParams, PolicySpec};
use crate::rng::{seed_rng, Rng};
use crate::tensor::Tensor3;
use crate::trainer::{episode_gradient, EpisodeState, TrainConfig};
use std::fmt::Write as _;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: String,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, passed: bool, details: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            details,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{status} {}::{} — {}", self.suite, c.name, c.details);
        }
        out
    }
}

/// Suite names accepted by [`run_suites`].
pub const SUITES: &[&str] = &[
    "bisection",
    "invariance",
    "counterexample",
    "augmented",
    "gradient",
];

/// Run one named suite ("invariance" covers both the correlation layer and
/// the whole network) or "all".
pub fn run_suites(name: &str, seed: u64) -> Result<Vec<SuiteReport>> {
    let reports = match name {
        "bisection" => vec![bisection_suite(seed)],
        "invariance" => vec![corr_invariance_suite(seed), network_invariance_suite(seed)?],
        "counterexample" => vec![counterexample_suite(seed)],
        "augmented" => vec![augmented_suite(seed)?],
        "gradient" => vec![gradient_suite(seed)?],
        "all" => {
            let mut all = vec![bisection_suite(seed), corr_invariance_suite(seed)];
            all.push(network_invariance_suite(seed)?);
            all.push(counterexample_suite(seed));
            all.push(augmented_suite(seed)?);
            all.push(gradient_suite(seed)?);
            all
        }
        other => {
            return Err(crate::error::CoreError::InvalidArgument(format!(
                "unknown suite '{other}'; expected one of {SUITES:?} or 'all'"
            )))
        }
    };
    Ok(reports)
}

fn random_simplex(m: usize, rng: &mut Rng) -> PortfolioWeights {
    PortfolioWeights::normalized((0..m).map(|_| rng.uniform() + 1e-9).collect()).unwrap()
}

/// Multilevel linear scan for the root of g; resolution below 1e-9. This is
/// the independent oracle for the bisection solver: it never bisects, it only
/// walks grids of shrinking width looking for the first sign change.
fn grid_scan_nu(wp: &[f64], wn: &[f64], rates: &CommissionRates) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..3 {
        let steps = 1024usize;
        let width = (hi - lo) / steps as f64;
        let mut found = hi;
        for s in 0..=steps {
            let nu = lo + s as f64 * width;
            if netting_gap(nu, wp, wn, rates) >= 0.0 {
                found = nu;
                break;
            }
        }
        lo = (found - width).max(0.0);
        hi = found;
    }
    0.5 * (lo + hi)
}

/// Bracket, lower bound, grid monotonicity, and oracle agreement of the
/// netting solver on 10^4 random instances.
pub fn bisection_suite(seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("bisection");
    let mut rng = seed_rng(seed ^ 0xb15ec7);
    let instances = 10_000usize;
    let mut bad_bracket = 0usize;
    let mut bad_bound = 0usize;
    let mut bad_monotone = 0usize;
    let mut max_oracle_diff = 0.0f64;
    let mut max_fixed_point = 0.0f64;
    for k in 0..instances {
        let m = 2 + rng.below(9);
        let wp = random_simplex(m, &mut rng);
        let wn = random_simplex(m, &mut rng);
        let rates =
            CommissionRates::new(rng.uniform_in(1e-9, 0.05), rng.uniform_in(1e-9, 0.05)).unwrap();
        let (wps, wns) = (wp.as_slice(), wn.as_slice());

        let g0 = netting_gap(0.0, wps, wns, &rates);
        if !(g0 < 0.0 && (g0 - (rates.sell - 1.0)).abs() < 1e-12) {
            bad_bracket += 1;
        }
        let l1: f64 = wps.iter().zip(wns).map(|(a, b)| (a - b).abs()).sum();
        let g1 = netting_gap(1.0, wps, wns, &rates);
        if g1 < rates.sell.min(rates.purchase) * l1 - 1e-12 {
            bad_bound += 1;
        }
        // full grid monotonicity on a subsample keeps the suite under budget
        if k % 10 == 0 {
            let mut prev = f64::NEG_INFINITY;
            for s in 0..=1000 {
                let g = netting_gap(s as f64 / 1000.0, wps, wns, &rates);
                if g < prev - 1e-12 {
                    bad_monotone += 1;
                    break;
                }
                prev = g;
            }
        }
        let nu = solve_nu(&wp, &wn, &rates, 1e-10).unwrap();
        let oracle = grid_scan_nu(wps, wns, &rates);
        max_oracle_diff = max_oracle_diff.max((nu - oracle).abs());
        max_fixed_point = max_fixed_point.max(netting_gap(nu, wps, wns, &rates).abs());
    }
    report.check(
        "bracket",
        bad_bracket == 0,
        format!("g(0) = c_s - 1 < 0 on {instances} instances ({bad_bracket} failures)"),
    );
    report.check(
        "lower_bound",
        bad_bound == 0,
        format!("g(1) >= min(c_s, c_p)|w' - w|_1 on {instances} instances ({bad_bound} failures)"),
    );
    report.check(
        "grid_monotone",
        bad_monotone == 0,
        format!("g nondecreasing on 1000-point grids ({bad_monotone} failures)"),
    );
    report.check(
        "oracle_match",
        max_oracle_diff <= 1e-8,
        format!("bisection vs grid scan: max diff {max_oracle_diff:.3e} (budget 1e-8)"),
    );
    report.check(
        "fixed_point",
        max_fixed_point <= 1e-10,
        format!("max |nu - f(nu)| = {max_fixed_point:.3e} (tolerance 1e-10)"),
    );
    report
}

/// Correlation-layer invariance witness and dual-implementation agreement on
/// 1000 random (m <= 8, h <= 16, d <= 4, sigma, spec, x).
pub fn corr_invariance_suite(seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("corr_invariance");
    let mut rng = seed_rng(seed ^ 0xc0441);
    let trials = 1000usize;
    let mut max_witness = 0.0f64;
    let mut dual_mismatches = 0usize;
    for _ in 0..trials {
        let m = 2 + rng.below(7);
        let h = 1 + rng.below(16);
        let d = 1 + rng.below(4);
        let mut spec = CorrSpec::random(m, d, &mut rng);
        spec.bias = rng.normal();
        let sigma = AssetPermutation::random(m, &mut rng);
        let x = Tensor3::random_normal(m, h, d, 1.0, &mut rng);

        let direct = corr_layer(&spec, &x).unwrap();
        let stacked = corr_layer_stacked(&spec, &x).unwrap();
        if !direct
            .data()
            .iter()
            .zip(stacked.data())
            .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            dual_mismatches += 1;
        }

        let witness = corr_weight_witness(&spec, &sigma).unwrap();
        let permuted = permute_assets(&sigma, &x).unwrap();
        let through = unpermute_assets(&sigma, &corr_layer(&witness, &permuted).unwrap()).unwrap();
        max_witness = max_witness.max(direct.max_abs_diff(&through));
    }
    report.check(
        "witness",
        max_witness <= 1e-12,
        format!("sigma^-1 o B_w' o sigma = B_w: max diff {max_witness:.3e} over {trials} trials (budget 1e-12)"),
    );
    report.check(
        "dual_exact",
        dual_mismatches == 0,
        format!("stacking loop vs closed form bitwise equal ({dual_mismatches} mismatches)"),
    );
    report
}

/// Whole-network invariance witness on 100 random (params, sigma, state,
/// previous weights) in eval mode.
pub fn network_invariance_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("network_invariance");
    let mut rng = seed_rng(seed ^ 0x6e71);
    let trials = 100usize;
    let mut max_diff = 0.0f64;
    for trial in 0..trials {
        let m = 2 + rng.below(7);
        let h = 29 + rng.below(8);
        let d = 1 + rng.below(3);
        let params = PolicyParams::init(PolicySpec::default_structure(m, h, d)?, seed ^ trial as u64)?;
        let sigma = AssetPermutation::random(m, &mut rng);
        let state = Tensor3::random_normal(m, h, d, 0.5, &mut rng);
        let prev = random_simplex(m, &mut rng);

        let direct = params.forward_policy(&state, &prev, ForwardMode::Eval)?;
        let witness = params.network_witness(&sigma)?;
        let state_p = permute_assets(&sigma, &state)?;
        let prev_p = PortfolioWeights::new(sigma.permute_slice(prev.as_slice()))?;
        let out_p = witness.forward_policy(&state_p, &prev_p, ForwardMode::Eval)?;
        let unperm = sigma.unpermute_slice(out_p.as_slice());
        let diff = direct
            .as_slice()
            .iter()
            .zip(&unperm)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        max_diff = max_diff.max(diff);
    }
    report.check(
        "witness_forward",
        max_diff <= 1e-10,
        format!("witnessed conjugation vs direct forward: max action diff {max_diff:.3e} over {trials} nets (budget 1e-10)"),
    );
    Ok(report)
}

/// The three-probe contradiction showing the zero-padded cross-asset layer
/// has no permutation witness, plus a randomized search that fails to find
/// an approximate one.
pub fn counterexample_suite(seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("counterexample");
    let mut rng = seed_rng(seed ^ 0x2840);
    let m = 5;
    let sigma = AssetPermutation::swap(m, 0, 1);
    let trials = 100usize;

    // conjugated layer evaluation: sigma^-1(B_{w,b}(sigma(x)))
    let conjugated = |kernel: &[f64], bias: f64, x: &Tensor3| -> Tensor3 {
        let spec = ZhangCorrSpec {
            kernel: Tensor3::from_vec(m, 1, 1, kernel.to_vec()).unwrap(),
            bias,
        };
        let permuted = permute_assets(&sigma, x).unwrap();
        let out = crate::blocks::zhang_corr_layer(&spec, &permuted).unwrap();
        unpermute_assets(&sigma, &out).unwrap()
    };
    let plain = |kernel: &[f64], bias: f64, x: &Tensor3| -> Tensor3 {
        let spec = ZhangCorrSpec {
            kernel: Tensor3::from_vec(m, 1, 1, kernel.to_vec()).unwrap(),
            bias,
        };
        crate::blocks::zhang_corr_layer(&spec, x).unwrap()
    };

    let probe0 = Tensor3::zeros(m, 1, 1);
    let mut probe1 = Tensor3::zeros(m, 1, 1);
    probe1.set(0, 0, 0, 1.0);
    let mut probe2 = Tensor3::zeros(m, 1, 1);
    probe2.set(1, 0, 0, 1.0);

    let mut derivation_fails = 0usize;
    let mut min_residual = f64::INFINITY;
    for _ in 0..trials {
        // fixed kernel with a definite w4 != w1 separation (1-indexed)
        let mut w_bar: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        if (w_bar[3] - w_bar[0]).abs() < 0.1 {
            w_bar[3] = w_bar[0] + 0.1 + rng.uniform();
        }

        // The target map G = sigma^-1 o B_{w_bar, 0} o sigma. If an exact
        // witness (w', b') existed, the probes would pin it down:
        let b_prime = conjugated(&w_bar, 0.0, &probe0).get(0, 0, 0);
        let w2_from_probe1 = conjugated(&w_bar, 0.0, &probe1).get(1, 0, 0); // B_{w',0}(e1)[2] = w'_2
        let w2_from_probe2 = conjugated(&w_bar, 0.0, &probe2).get(2, 0, 0); // B_{w',0}(e2)[3] = w'_2
        let ok = b_prime == 0.0
            && (w2_from_probe1 - w_bar[3]).abs() < 1e-15
            && (w2_from_probe2 - w_bar[0]).abs() < 1e-15
            && (w2_from_probe1 - w2_from_probe2).abs() >= 0.1 - 1e-12;
        if !ok {
            derivation_fails += 1;
        }

        // Randomized search for an approximate witness: residual over the
        // three probes. Includes the analytically best compromise candidate.
        let probes = [&probe0, &probe1, &probe2];
        let residual = |kernel: &[f64], bias: f64| -> f64 {
            probes
                .iter()
                .map(|p| {
                    let target = conjugated(&w_bar, 0.0, p);
                    let got = plain(kernel, bias, p);
                    target.max_abs_diff(&got)
                })
                .fold(0.0f64, f64::max)
        };
        let mut best = residual(&w_bar, 0.0);
        // compromise: satisfy every derivable constraint, split the conflict
        let mut compromise = w_bar.clone();
        compromise[1] = 0.5 * (w_bar[3] + w_bar[0]);
        best = best.min(residual(&compromise, 0.0));
        for _ in 0..2000 {
            let cand: Vec<f64> = (0..m).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let bias = rng.uniform_in(-0.5, 0.5);
            best = best.min(residual(&cand, bias));
        }
        min_residual = min_residual.min(best);
    }
    report.check(
        "three_probe_contradiction",
        derivation_fails == 0,
        format!(
            "b' = 0, w'_2 = w_bar_4 and w'_2 = w_bar_1 conflict on {trials} random kernels ({derivation_fails} failures)"
        ),
    );
    report.check(
        "no_approximate_witness",
        min_residual >= 1e-3,
        format!("randomized witness search floor {min_residual:.3e} (must stay above 1e-3)"),
    );
    report
}

/// Multi-period forward equals sequential single-window forwards for
/// T in {1, 2, 8, 32} at m in {3, 10}, and is at least twice as fast at
/// T = 32, m = 10.
pub fn augmented_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("augmented");
    let mut rng = seed_rng(seed ^ 0xa46);
    let h = 32usize;
    let mut max_diff = 0.0f64;
    for &m in &[3usize, 10] {
        let params = PolicyParams::init(PolicySpec::default_structure(m, h, 1)?, seed ^ m as u64)?;
        for &t_steps in &[1usize, 2, 8, 32] {
            let len = h + t_steps - 1;
            let features = Tensor3::random_normal(m, len, 1, 0.3, &mut rng);
            let mut raw = Tensor3::zeros(m, len, 1);
            for i in 0..m {
                for j in 0..len {
                    raw.set(i, j, 0, (0.01 * rng.normal()).exp());
                }
            }
            let prev0 = PortfolioWeights::uniform(m);
            let aug = params.forward_augmented(
                &features,
                Some(&raw),
                &prev0,
                t_steps,
                ForwardMode::Eval,
            )?;
            let mut prev = prev0.clone();
            for t in 0..t_steps {
                let window = features.time_slice(t, h)?;
                let w = params.forward_policy(&window, &prev, ForwardMode::Eval)?;
                let diff = aug[t]
                    .as_slice()
                    .iter()
                    .zip(w.as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                max_diff = max_diff.max(diff);
                if t + 1 < t_steps {
                    let xi: Vec<f64> = (0..m).map(|i| raw.get(i, t + h, 0)).collect();
                    prev = crate::env::drift_weights(&w, &xi)?;
                }
            }
        }
    }
    report.check(
        "equivalence",
        max_diff <= 1e-10,
        format!("augmented vs sequential actions: max diff {max_diff:.3e} (budget 1e-10)"),
    );

    // wall-clock comparison at T = 32, m = 10
    let (m, t_steps) = (10usize, 32usize);
    let params = PolicyParams::init(PolicySpec::default_structure(m, h, 1)?, seed ^ 77)?;
    let len = h + t_steps - 1;
    let features = Tensor3::random_normal(m, len, 1, 0.3, &mut rng);
    let mut raw = Tensor3::zeros(m, len, 1);
    for i in 0..m {
        for j in 0..len {
            raw.set(i, j, 0, (0.01 * rng.normal()).exp());
        }
    }
    let prev0 = PortfolioWeights::uniform(m);
    let mut best_aug = f64::INFINITY;
    let mut best_seq = f64::INFINITY;
    for _ in 0..3 {
        let t0 = Instant::now();
        let aug =
            params.forward_augmented(&features, Some(&raw), &prev0, t_steps, ForwardMode::Eval)?;
        best_aug = best_aug.min(t0.elapsed().as_secs_f64());
        std::hint::black_box(&aug);

        let t1 = Instant::now();
        let mut prev = prev0.clone();
        let mut outs = Vec::new();
        for t in 0..t_steps {
            let window = features.time_slice(t, h)?;
            let w = params.forward_policy(&window, &prev, ForwardMode::Eval)?;
            if t + 1 < t_steps {
                let xi: Vec<f64> = (0..m).map(|i| raw.get(i, t + h, 0)).collect();
                prev = crate::env::drift_weights(&w, &xi)?;
            }
            outs.push(w);
        }
        best_seq = best_seq.min(t1.elapsed().as_secs_f64());
        std::hint::black_box(&outs);
    }
    let speedup = best_seq / best_aug;
    report.check(
        "speedup",
        speedup >= 2.0,
        format!(
            "one augmented pass {best_aug:.4}s vs {t_steps} sequential passes {best_seq:.4}s: {speedup:.1}x (need >= 2x)"
        ),
    );
    Ok(report)
}

/// Full-parameter central finite differences on the training objective at
/// m = 3, h = 29, T = 4, dropout active under a fixed mask seed.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("gradient");
    let synth = SynthConfig::iid(3, 140, 0.0003, 0.012, seed ^ 0x9aad);
    let table = generate_synthetic(&synth)?;
    let window = to_relatives(&table)?;
    let n = window.len();
    let window = window.with_splits(Splits::from_fractions(n, 0.8, 0.1)?)?;

    let cfg = TrainConfig {
        horizon: 4,
        lookback: 29,
        dropout_rate: 0.5,
        ..TrainConfig::default()
    };
    let params = PolicyParams::init(PolicySpec::default_structure(3, 29, 1)?, seed ^ 0x94ad)?;
    let episode = EpisodeState {
        cursor: 0,
        carry_weights: PortfolioWeights::uniform(3),
    };
    let mask_seed = seed ^ 0xd40;

    let grad = episode_gradient(
        &params,
        &window,
        &episode,
        &cfg,
        crate::data::SplitId::Train,
        Some(&mut Rng::new(mask_seed)),
    )?;

    let eval = |p: &PolicyParams| -> Result<f64> {
        crate::trainer::episode_objective(
            p,
            &window,
            &episode,
            &cfg,
            crate::data::SplitId::Train,
            Some(&mut Rng::new(mask_seed)),
        )
    };

    // Primary step 1e-5; a secant that straddles one of the objective's relu
    // kinks misestimates the one-sided derivative, so on mismatch the step is
    // refined. Kink artifacts vanish as the step shrinks; a wrong backward
    // rule does not.
    let steps = [1e-5f64, 1e-6, 1e-7];
    let mut checked = 0usize;
    let mut refined = 0usize;
    let mut worst_rel = 0.0f64;
    let mut worst_at = String::new();
    let mut failures = 0usize;
    let ids: Vec<_> = params.store().slot_ids().collect();
    for (s, id) in ids.iter().enumerate() {
        let len = params.store().value(*id).len();
        for e in 0..len {
            let got = grad.grads[s][e];
            let mut best_rel = f64::INFINITY;
            let mut best_fd = f64::NAN;
            for (si, &eps) in steps.iter().enumerate() {
                let mut plus = params.clone();
                plus.store_mut().value_mut(*id).data_mut()[e] += eps;
                let fp = eval(&plus)?;
                let mut minus = params.clone();
                minus.store_mut().value_mut(*id).data_mut()[e] -= eps;
                let fm = eval(&minus)?;
                let fd = (fp - fm) / (2.0 * eps);
                // relative error with an absolute floor for near-zero gradients
                let rel = (fd - got).abs() / fd.abs().max(got.abs()).max(1e-3);
                if rel < best_rel {
                    best_rel = rel;
                    best_fd = fd;
                }
                if rel <= 1e-4 {
                    if si > 0 {
                        refined += 1;
                    }
                    break;
                }
            }
            if best_rel > worst_rel {
                worst_rel = best_rel;
                worst_at = format!(
                    "{}[{e}] fd {best_fd:.6e} vs {got:.6e}",
                    params.store().name(*id)
                );
            }
            if best_rel > 1e-4 {
                failures += 1;
            }
            checked += 1;
        }
    }
    report.check(
        "finite_differences",
        failures == 0,
        format!(
            "{checked} parameters checked ({refined} needed a refined step at a relu kink), \
             worst relative error {worst_rel:.3e} at {worst_at} (budget 1e-4, {failures} failures)"
        ),
    );
    Ok(report)
}
