//! Risk-averse policy-gradient training.
//!
//! The objective is the trajectory Sharpe ratio of T approximate period log
//! returns produced by rolling the policy through the market recursion; the
//! gradient is obtained by backpropagating through the whole construction,
//! including the endogenous weight drift (an action at step t changes the
//! drifted allocation at t+1 and hence every later reward). Updates ascend
//! with adaptive moment estimation under a multiplicative learning-rate decay
//! floored at a minimum rate. Optionally, allocations above a maximum holding
//! are penalized by a large constant.

use crate::data::{MarketWindow, SplitId};
use crate::env::{drift_weights, reward_approx_var, CommissionRates, PortfolioWeights};
use crate::error::{CoreError, Result};
use crate::metrics::{backtest, PolicyKind};
use crate::policy::{ForwardMode, PolicyParams};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// When the carried initial allocation is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FUpdate {
    /// After every T-step episode (default).
    PerEpisode,
    /// Once per pass over the training range.
    PerEpoch,
}

/// Training hyper-parameters. Defaults follow the selected values of the
/// reference configuration: learning rate 5e-5 decaying by 0.99999 per step
/// with floor 1e-5, T = 32, h = 32, up to 5000 epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub min_rate: f64,
    /// Planning horizon T (episode length in rewards).
    pub horizon: usize,
    /// Look-back window h.
    pub lookback: usize,
    pub max_epochs: usize,
    pub commission_sell: f64,
    pub commission_purchase: f64,
    pub seed: u64,
    /// Maximum holding per asset; `None` disables the penalty.
    pub max_weight: Option<f64>,
    /// Penalty constant M applied as M/T per step of excess allocation.
    pub penalty: f64,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    /// Epochs between validation evaluations.
    pub validate_every: usize,
    pub dropout_rate: f64,
    pub f_update: FUpdate,
    /// Sample-std threshold below which an episode is skipped as degenerate.
    pub variance_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            decay_rate: 0.99999,
            min_rate: 1e-5,
            horizon: 32,
            lookback: 32,
            max_epochs: 5000,
            commission_sell: 0.0005,
            commission_purchase: 0.0005,
            seed: 0,
            max_weight: None,
            penalty: 1e3,
            patience: 20,
            validate_every: 10,
            dropout_rate: 0.5,
            f_update: FUpdate::PerEpisode,
            variance_eps: 1e-12,
        }
    }
}

impl TrainConfig {
    pub fn rates(&self) -> Result<CommissionRates> {
        CommissionRates::new(self.commission_sell, self.commission_purchase)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(CoreError::InvalidArgument(
                "horizon must be at least 2 (the Sharpe ratio needs a sample std)".into(),
            ));
        }
        if self.lookback < 29 {
            return Err(CoreError::InvalidArgument(
                "lookback must cover the trunk receptive field (>= 29)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(CoreError::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.validate_every == 0 {
            return Err(CoreError::InvalidArgument(
                "validate_every must be at least 1 (use a value above max_epochs to disable validation)"
                    .into(),
            ));
        }
        self.rates()?;
        Ok(())
    }

    /// Learning rate applied at a given 1-based step index.
    pub fn rate_at(&self, step: usize) -> f64 {
        (self.learning_rate * self.decay_rate.powi(step.saturating_sub(1) as i32))
            .max(self.min_rate)
    }
}

/// Cursor and carried endogenous state of the episode stream.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub cursor: usize,
    pub carry_weights: PortfolioWeights,
}

/// Trajectory Sharpe ratio: mean over the unbiased sample standard deviation.
pub fn sharpe_ratio(returns: &[f64]) -> Result<f64> {
    sharpe_ratio_eps(returns, 1e-12)
}

pub fn sharpe_ratio_eps(returns: &[f64], eps: f64) -> Result<f64> {
    let t = returns.len();
    if t < 2 {
        return Err(CoreError::InvalidArgument(
            "Sharpe ratio needs at least two returns".into(),
        ));
    }
    let mean = returns.iter().sum::<f64>() / t as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (t - 1) as f64;
    let std = var.sqrt();
    if std <= eps {
        return Err(CoreError::DegenerateVariance { std, eps });
    }
    Ok(mean / std)
}

/// Value, gradient, and carried state of one episode.
#[derive(Debug)]
pub struct EpisodeGrad {
    /// Sharpe ratio of the episode's rewards.
    pub sharpe: f64,
    /// Sharpe minus the max-holding penalty (the ascended quantity).
    pub objective: f64,
    /// Per-slot gradients, in parameter-store order.
    pub grads: Vec<Vec<f64>>,
    /// Drifted weights after the final action, for the next episode.
    pub carry_out: PortfolioWeights,
}

/// Forward the policy over one episode window and backpropagate the
/// objective. The window spans h+T-1 feature columns at the cursor; rewards
/// consume the T relatives that follow the first h columns.
pub fn episode_gradient(
    params: &PolicyParams,
    window: &MarketWindow,
    episode: &EpisodeState,
    cfg: &TrainConfig,
    split: SplitId,
    rng: Option<&mut Rng>,
) -> Result<EpisodeGrad> {
    let (h, t_steps) = (cfg.lookback, cfg.horizon);
    let rates = cfg.rates()?;
    // One hygiene-checked extraction covering features and reward columns.
    let raw_ext = window.relatives_window(split, episode.cursor, h + t_steps)?;
    let features = window.features_window(split, episode.cursor, h + t_steps - 1)?;
    let raw_for_drift = raw_ext.time_slice(0, h + t_steps - 1)?;

    let mode = match rng {
        Some(r) => ForwardMode::Train(r),
        None => ForwardMode::Eval,
    };
    let mut pass = params.forward_augmented_tape(
        &features,
        Some(&raw_for_drift),
        &episode.carry_weights,
        t_steps,
        mode,
    )?;

    // Rewards: r_t = ln f(1, w'_t, a_t) + ln(xi_{t+1} . a_t).
    let m = window.asset_count();
    let mut rewards = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let xi_next: Vec<f64> = (0..m).map(|i| raw_ext.get(i, h + t, 0)).collect();
        let r = reward_approx_var(
            &mut pass.tape,
            pass.prev_weights[t],
            pass.actions[t],
            &xi_next,
            &rates,
        )?;
        rewards.push(r);
    }

    // Sharpe ratio of the reward vector.
    let stacked = pass.tape.stack_scalars(&rewards)?;
    let sum = pass.tape.sum_all(stacked);
    let mean = pass.tape.affine(sum, 1.0 / t_steps as f64, 0.0);
    let centered = pass.tape.sub_broadcast(stacked, mean)?;
    let sq = pass.tape.hadamard(centered, centered)?;
    let ssum = pass.tape.sum_all(sq);
    let var = pass.tape.affine(ssum, 1.0 / (t_steps - 1) as f64, 0.0);
    let std_val = pass.tape.value(var).scalar_value().sqrt();
    if std_val <= cfg.variance_eps {
        return Err(CoreError::DegenerateVariance {
            std: std_val,
            eps: cfg.variance_eps,
        });
    }
    let std = pass.tape.sqrt(var)?;
    let sharpe = pass.tape.div_broadcast(mean, std)?;

    // Optional max-holding penalty: (M/T) * sum_t sum_i (w_t^i - w_max)+.
    let objective = match cfg.max_weight {
        None => sharpe,
        Some(w_max) => {
            let mut total: Option<crate::tape::Var> = None;
            for &a in &pass.actions {
                let excess = pass.tape.affine(a, 1.0, -w_max);
                let pos = pass.tape.relu(excess);
                let s = pass.tape.sum_all(pos);
                total = Some(match total {
                    None => s,
                    Some(acc) => pass.tape.add(acc, s)?,
                });
            }
            let total = total.expect("horizon >= 2");
            let scaled = pass.tape.affine(total, cfg.penalty / t_steps as f64, 0.0);
            pass.tape.sub(sharpe, scaled)?
        }
    };

    let objective_val = pass.tape.value(objective).scalar_value();
    if !objective_val.is_finite() {
        return Err(CoreError::NonFinite("training objective"));
    }

    let grads = pass.tape.backward(objective)?;
    let per_slot: Vec<Vec<f64>> = params
        .store()
        .slot_ids()
        .map(|id| {
            grads
                .get(pass.slot_var(id))
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; params.store().value(id).len()])
        })
        .collect();

    // Carry the endogenous state past the final reward column.
    let last_action = pass.action_weights(t_steps - 1)?;
    let xi_last: Vec<f64> = (0..m).map(|i| raw_ext.get(i, h + t_steps - 1, 0)).collect();
    let carry_out = drift_weights(&last_action, &xi_last)?;

    Ok(EpisodeGrad {
        sharpe: pass.tape.value(sharpe).scalar_value(),
        objective: objective_val,
        grads: per_slot,
        carry_out,
    })
}

/// Objective value only, rebuilding the same tape; used by the
/// finite-difference oracle.
pub fn episode_objective(
    params: &PolicyParams,
    window: &MarketWindow,
    episode: &EpisodeState,
    cfg: &TrainConfig,
    split: SplitId,
    rng: Option<&mut Rng>,
) -> Result<f64> {
    episode_gradient(params, window, episode, cfg, split, rng).map(|g| g.objective)
}

/// Adaptive-moment ascent state.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(params: &PolicyParams) -> Self {
        let shapes: Vec<usize> = params.store().iter().map(|(_, _, v)| v.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_index(&self) -> usize {
        self.step
    }
}

/// One ascent step: params += lr(step) * m_hat / (sqrt(v_hat) + eps).
pub fn sgd_step(
    params: &mut PolicyParams,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> f64 {
    state.step += 1;
    let lr = cfg.rate_at(state.step);
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let ids: Vec<_> = params.store().slot_ids().collect();
    for (s, id) in ids.into_iter().enumerate() {
        let m = &mut state.m[s];
        let v = &mut state.v[s];
        let value = params.store_mut().value_mut(id);
        for (e, g) in grads[s].iter().enumerate() {
            m[e] = state.beta1 * m[e] + (1.0 - state.beta1) * g;
            v[e] = state.beta2 * v[e] + (1.0 - state.beta2) * g * g;
            let m_hat = m[e] / bc1;
            let v_hat = v[e] / bc2;
            value.data_mut()[e] += lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    lr
}

/// One gradient-step record of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub epoch: usize,
    pub step: usize,
    pub sharpe: f64,
    pub objective: f64,
    pub learning_rate: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub sharpe: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeRecord>,
    pub validations: Vec<ValidationRecord>,
    pub skipped_degenerate: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Result of a training run: the best-validation parameters (falling back to
/// the final ones when validation never ran) plus the full log.
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: TrainingLog,
}

/// Train on the train split, validating on the validation split. Episodes
/// advance by T through the training range and wrap per epoch; the drifted
/// allocation after each episode seeds the next one's endogenous state.
pub fn train(
    mut params: PolicyParams,
    window: &MarketWindow,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = window
        .splits
        .clone()
        .ok_or_else(|| CoreError::InvalidArgument("training data has no splits".into()))?;
    let range = splits.range(SplitId::Train);
    let (h, t_steps) = (cfg.lookback, cfg.horizon);
    if range.end < range.start + h + t_steps {
        return Err(CoreError::Data(format!(
            "training range {range:?} shorter than h + T = {}",
            h + t_steps
        )));
    }
    if params.spec().lookback != h {
        return Err(CoreError::InvalidArgument(format!(
            "policy lookback {} differs from configured h {h}",
            params.spec().lookback
        )));
    }
    // train-mode forwards apply the policy's dropout rate; a differing
    // configured rate would silently lie about what ran
    if cfg.dropout_rate > 0.0 && params.spec().dropout_rate != cfg.dropout_rate {
        return Err(CoreError::InvalidArgument(format!(
            "configured dropout rate {} differs from the policy's {}",
            cfg.dropout_rate,
            params.spec().dropout_rate
        )));
    }

    let mut dropout_rng = Rng::new(cfg.seed).fork(0x5eed_d401);
    let mut adam = AdamState::new(&params);
    let mut log = TrainingLog::default();
    let m = window.asset_count();
    let mut carry = PortfolioWeights::uniform(m);
    let mut best: Option<(f64, PolicyParams)> = None;
    let mut evals_since_best = 0usize;

    'epochs: for epoch in 0..cfg.max_epochs {
        let mut cursor = range.start;
        let epoch_carry = carry.clone();
        while cursor + h + t_steps <= range.end {
            let episode = EpisodeState {
                cursor,
                carry_weights: match cfg.f_update {
                    FUpdate::PerEpisode => carry.clone(),
                    FUpdate::PerEpoch => epoch_carry.clone(),
                },
            };
            let rng = if cfg.dropout_rate > 0.0 {
                Some(&mut dropout_rng)
            } else {
                None
            };
            match episode_gradient(&params, window, &episode, cfg, SplitId::Train, rng) {
                Ok(grad) => {
                    let grad_norm = grad
                        .grads
                        .iter()
                        .flat_map(|g| g.iter())
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt();
                    let lr = sgd_step(&mut params, &grad.grads, &mut adam, cfg);
                    carry = grad.carry_out;
                    log.episodes.push(EpisodeRecord {
                        epoch,
                        step: adam.step_index(),
                        sharpe: grad.sharpe,
                        objective: grad.objective,
                        learning_rate: lr,
                        grad_norm,
                    });
                }
                Err(CoreError::DegenerateVariance { .. }) => {
                    log.skipped_degenerate += 1;
                }
                Err(e) => return Err(e),
            }
            cursor += t_steps;
        }
        log.epochs_run = epoch + 1;

        if (epoch + 1) % cfg.validate_every == 0 {
            let val = validation_sharpe(&params, window, cfg)?;
            let improved = best.as_ref().is_none_or(|(b, _)| val > *b);
            log.validations.push(ValidationRecord {
                epoch,
                sharpe: val,
                improved,
            });
            if improved {
                best = Some((val, params.clone()));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.patience {
                    log.stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }

    let params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok(TrainOutcome { params, log })
}

/// Out-of-sample Sharpe ratio on the validation split (exact cost model,
/// dropout off). Degenerate-variance validation windows count as 0.
pub fn validation_sharpe(
    params: &PolicyParams,
    window: &MarketWindow,
    cfg: &TrainConfig,
) -> Result<f64> {
    let report = backtest(
        PolicyKind::Network(params),
        window,
        SplitId::Validation,
        &cfg.rates()?,
        None,
    )?;
    Ok(report.sharpe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, to_relatives, Splits, SynthConfig};
    use crate::policy::PolicySpec;
    use crate::rng::seed_rng;

    fn tiny_window(days: usize, seed: u64) -> MarketWindow {
        let cfg = SynthConfig::iid(3, days, 0.0003, 0.01, seed);
        let table = generate_synthetic(&cfg).unwrap();
        let win = to_relatives(&table).unwrap();
        let n = win.len();
        win.with_splits(Splits::from_fractions(n, 0.7, 0.15).unwrap())
            .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            horizon: 4,
            lookback: 29,
            max_epochs: 2,
            dropout_rate: 0.0,
            validate_every: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sharpe_examples() {
        // zero mean
        assert!(sharpe_ratio(&[0.01, -0.01]).unwrap().abs() < 1e-15);
        // closed form: mean 0.02, sample std 0.01
        let sr = sharpe_ratio(&[0.01, 0.02, 0.03]).unwrap();
        assert!((sr - 2.0).abs() < 1e-12, "sr {sr}");
        // scale invariance
        let base = sharpe_ratio(&[0.01, 0.05, -0.02, 0.03]).unwrap();
        let scaled = sharpe_ratio(&[0.04, 0.20, -0.08, 0.12]).unwrap();
        assert!((base - scaled).abs() < 1e-12);
        // degenerate variance
        assert!(matches!(
            sharpe_ratio(&[0.01, 0.01, 0.01]),
            Err(CoreError::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn sharpe_gradient_structure_at_t2() {
        // Two exact consequences of the mean/std structure at T = 2:
        // homogeneity of degree zero gives r0 dSR/dr0 + r1 dSR/dr1 = 0, and
        // the mean direction gives dSR/dr0 + dSR/dr1 = 1/std. (The centered
        // components of the gradient are antisymmetric; the raw partials are
        // not, since the mean direction contributes 1/(2 std) to each.)
        let f = |r0: f64, r1: f64| sharpe_ratio(&[r0, r1]).unwrap();
        let (r0, r1) = (0.013, -0.004);
        let eps = 1e-7;
        let g0 = (f(r0 + eps, r1) - f(r0 - eps, r1)) / (2.0 * eps);
        let g1 = (f(r0, r1 + eps) - f(r0, r1 - eps)) / (2.0 * eps);
        let euler = r0 * g0 + r1 * g1;
        assert!(euler.abs() < 1e-6, "Euler identity: {euler}");
        let std = ((r0 - r1) * (r0 - r1) / 2.0f64).sqrt();
        assert!(
            (g0 + g1 - 1.0 / std).abs() < 1e-3,
            "mean direction: {}",
            g0 + g1
        );
        // centered components mirror each other
        let c0 = g0 - 0.5 / std;
        let c1 = g1 - 0.5 / std;
        assert!(
            (c0 + c1).abs() < 1e-3,
            "centered antisymmetry: {c0} vs {c1}"
        );
    }

    #[test]
    fn rate_schedule_is_monotone_and_floored() {
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            decay_rate: 0.99,
            min_rate: 5e-5,
            ..TrainConfig::default()
        };
        let mut prev = f64::INFINITY;
        for step in 1..2000 {
            let r = cfg.rate_at(step);
            assert!(r <= prev && r >= cfg.min_rate);
            prev = r;
        }
        assert_eq!(cfg.rate_at(1999), cfg.min_rate);
    }

    #[test]
    fn adam_zero_grads_leave_params_unchanged() {
        let params0 = PolicyParams::init(PolicySpec::default_structure(3, 29, 1).unwrap(), 3).unwrap();
        let mut params = params0.clone();
        let mut adam = AdamState::new(&params);
        let cfg = tiny_cfg();
        let zeros: Vec<Vec<f64>> = params
            .store()
            .iter()
            .map(|(_, _, v)| vec![0.0; v.len()])
            .collect();
        for _ in 0..3 {
            sgd_step(&mut params, &zeros, &mut adam, &cfg);
        }
        assert_eq!(params.store().max_abs_diff(params0.store()), 0.0);
    }

    #[test]
    fn adam_maximizes_a_quadratic() {
        // maximize -(x - 3)^2 elementwise via the shared update rule
        let cfg = TrainConfig {
            learning_rate: 0.05,
            decay_rate: 1.0,
            min_rate: 1e-9,
            ..TrainConfig::default()
        };
        let mut x = [0.0f64; 4];
        let mut m = [0.0f64; 4];
        let mut v = [0.0f64; 4];
        for step in 1..=5000 {
            let lr = cfg.rate_at(step);
            let bc1 = 1.0 - 0.9f64.powi(step as i32);
            let bc2 = 1.0 - 0.999f64.powi(step as i32);
            for e in 0..4 {
                let g = -2.0 * (x[e] - 3.0); // ascent gradient of -(x-3)^2
                m[e] = 0.9 * m[e] + 0.1 * g;
                v[e] = 0.999 * v[e] + 0.001 * g * g;
                x[e] += lr * (m[e] / bc1) / ((v[e] / bc2).sqrt() + 1e-8);
            }
        }
        for e in 0..4 {
            assert!((x[e] - 3.0).abs() < 1e-6, "x[{e}] = {}", x[e]);
        }
    }

    #[test]
    fn constant_prices_give_degenerate_variance() {
        let dates: Vec<String> = (0..80)
            .map(|i| format!("2020-{:02}-{:02}", 1 + i / 28, 1 + i % 28))
            .collect();
        let table = crate::data::PriceTable::new(
            dates,
            vec!["A".into(), "B".into()],
            vec!["close".into()],
            vec![1.0; 160],
        )
        .unwrap();
        let win = to_relatives(&table).unwrap();
        let n = win.len();
        let win = win
            .with_splits(Splits::from_fractions(n, 0.9, 0.05).unwrap())
            .unwrap();
        let params = PolicyParams::init(PolicySpec::default_structure(2, 29, 1).unwrap(), 5).unwrap();
        let cfg = TrainConfig {
            horizon: 4,
            lookback: 29,
            commission_sell: 0.0,
            commission_purchase: 0.0,
            dropout_rate: 0.0,
            ..TrainConfig::default()
        };
        let episode = EpisodeState {
            cursor: 0,
            carry_weights: PortfolioWeights::uniform(2),
        };
        let err =
            episode_gradient(&params, &win, &episode, &cfg, SplitId::Train, None).unwrap_err();
        assert!(matches!(err, CoreError::DegenerateVariance { .. }), "{err}");
    }

    #[test]
    fn penalty_lowers_the_objective_by_the_excess() {
        let win = tiny_window(120, 21);
        let params = PolicyParams::init(PolicySpec::default_structure(3, 29, 1).unwrap(), 22).unwrap();
        let mut cfg = tiny_cfg();
        let episode = EpisodeState {
            cursor: 0,
            carry_weights: PortfolioWeights::uniform(3),
        };
        cfg.max_weight = None;
        let plain = episode_gradient(&params, &win, &episode, &cfg, SplitId::Train, None).unwrap();
        // w_max = 0 penalizes the entire simplex mass: sum_i w_i = 1 per step
        cfg.max_weight = Some(0.0);
        cfg.penalty = 1e3;
        let pen = episode_gradient(&params, &win, &episode, &cfg, SplitId::Train, None).unwrap();
        let expect = plain.objective - 1e3 / cfg.horizon as f64 * cfg.horizon as f64;
        assert!(
            (pen.objective - expect).abs() < 1e-9,
            "{} vs {expect}",
            pen.objective
        );
        assert!((pen.sharpe - plain.sharpe).abs() < 1e-12);
    }

    #[test]
    fn episode_gradient_matches_finite_differences_spotcheck() {
        // a fast sampled check; the full-parameter sweep runs in the
        // acceptance suite
        let win = tiny_window(120, 31);
        let params = PolicyParams::init(PolicySpec::default_structure(3, 29, 1).unwrap(), 32).unwrap();
        let cfg = tiny_cfg();
        let episode = EpisodeState {
            cursor: 0,
            carry_weights: PortfolioWeights::uniform(3),
        };
        let grad = episode_gradient(&params, &win, &episode, &cfg, SplitId::Train, None).unwrap();

        let mut rng = seed_rng(33);
        let ids: Vec<_> = params.store().slot_ids().collect();
        let eps = 1e-5;
        let mut checked = 0;
        for (s, id) in ids.iter().enumerate() {
            let n = params.store().value(*id).len();
            for _ in 0..2.min(n) {
                let e = rng.below(n);
                let mut plus = params.clone();
                plus.store_mut().value_mut(*id).data_mut()[e] += eps;
                let fp =
                    episode_objective(&plus, &win, &episode, &cfg, SplitId::Train, None).unwrap();
                let mut minus = params.clone();
                minus.store_mut().value_mut(*id).data_mut()[e] -= eps;
                let fm =
                    episode_objective(&minus, &win, &episode, &cfg, SplitId::Train, None).unwrap();
                let fd = (fp - fm) / (2.0 * eps);
                let got = grad.grads[s][e];
                let denom = fd.abs().max(got.abs()).max(1e-3);
                assert!(
                    ((fd - got) / denom).abs() < 1e-4,
                    "slot {} entry {e}: fd {fd} vs {got}",
                    params.store().name(*id)
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let win = tiny_window(400, 41);
        let spec = PolicySpec::default_structure(3, 29, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            dropout_rate: 0.5,
            validate_every: 1,
            ..tiny_cfg()
        };
        let run = || {
            let params = PolicyParams::init(spec.clone(), 42).unwrap();
            train(params, &win, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.log.episodes.len(), b.log.episodes.len());
        for (x, y) in a.log.episodes.iter().zip(&b.log.episodes) {
            assert_eq!(x.objective.to_bits(), y.objective.to_bits());
            assert_eq!(x.grad_norm.to_bits(), y.grad_norm.to_bits());
        }
        assert_eq!(a.params.store().max_abs_diff(b.params.store()), 0.0);
    }

    #[test]
    fn permutation_consistent_training_step() {
        // one update on permuted data from witness-permuted params stays the
        // witness image of the plain update
        let win = tiny_window(140, 51);
        let spec = PolicySpec::default_structure(3, 29, 1).unwrap();
        let params = PolicyParams::init(spec, 52).unwrap();
        let cfg = tiny_cfg(); // dropout 0 keeps the step deterministic
        let sigma = crate::blocks::AssetPermutation::from_indices(vec![2, 0, 1]).unwrap();
        let episode = EpisodeState {
            cursor: 0,
            carry_weights: PortfolioWeights::uniform(3),
        };

        // plain step
        let grad = episode_gradient(&params, &win, &episode, &cfg, SplitId::Train, None).unwrap();
        let mut plain = params.clone();
        let mut adam = AdamState::new(&plain);
        sgd_step(&mut plain, &grad.grads, &mut adam, &cfg);

        // permuted step
        let win_p = win.permute_assets(&sigma).unwrap();
        let params_p = params.network_witness(&sigma).unwrap();
        let episode_p = EpisodeState {
            cursor: 0,
            carry_weights: PortfolioWeights::new(
                sigma.permute_slice(episode.carry_weights.as_slice()),
            )
            .unwrap(),
        };
        let grad_p =
            episode_gradient(&params_p, &win_p, &episode_p, &cfg, SplitId::Train, None).unwrap();
        let mut permuted = params_p.clone();
        let mut adam_p = AdamState::new(&permuted);
        sgd_step(&mut permuted, &grad_p.grads, &mut adam_p, &cfg);

        let expected = plain.network_witness(&sigma).unwrap();
        let diff = expected.store().max_abs_diff(permuted.store());
        assert!(diff < 1e-8, "witness image diverged by {diff}");
        assert!((grad.sharpe - grad_p.sharpe).abs() < 1e-10);
    }

    #[test]
    fn per_epoch_state_refresh_differs_from_per_episode() {
        let win = tiny_window(300, 61);
        let spec = PolicySpec::default_structure(3, 29, 1).unwrap();
        let run = |f_update: FUpdate| {
            let cfg = TrainConfig {
                max_epochs: 2,
                f_update,
                ..tiny_cfg()
            };
            let params = PolicyParams::init(spec.clone(), 62).unwrap();
            train(params, &win, &cfg).unwrap()
        };
        let per_episode = run(FUpdate::PerEpisode);
        let per_epoch = run(FUpdate::PerEpoch);
        assert_eq!(per_episode.log.episodes.len(), per_epoch.log.episodes.len());
        // identical first episode (both start from uniform weights), then the
        // carried state diverges
        let a = &per_episode.log.episodes;
        let b = &per_epoch.log.episodes;
        assert_eq!(a[0].objective.to_bits(), b[0].objective.to_bits());
        assert!(
            a[1..]
                .iter()
                .zip(&b[1..])
                .any(|(x, y)| x.objective != y.objective),
            "per-epoch refresh should change later episodes"
        );
    }
}
