//! Portfolio market environment: weight/value evolution under multiplicative
//! price relatives and proportional transaction costs.
//!
//! Rebalancing from drifted weights w' to chosen weights w keeps only a
//! fraction nu of portfolio value, where nu solves the fixed point
//!
//!   nu = f(nu, w', w) = 1 - c_s * sum_i (w'_i - nu w_i)+ - c_p * sum_i (nu w_i - w'_i)+.
//!
//! g(nu) = nu - f(nu) is strictly increasing on [0, 1] with g(0) < 0 and
//! g(1) > 0 whenever a trade happens, so bisection finds nu exactly (up to
//! tolerance). Training uses the differentiable approximation ln f(1, w', w);
//! backtesting always uses the exact nu.

use crate::error::{CoreError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor3;

const SIMPLEX_TOL: f64 = 1e-9;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(CoreError::OffSimplex("empty weight vector".into()));
        }
        if w.iter().any(|&x| !x.is_finite() || x < -SIMPLEX_TOL) {
            return Err(CoreError::OffSimplex(format!(
                "negative or non-finite entry in {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(CoreError::OffSimplex(format!("sum {sum} != 1")));
        }
        Ok(PortfolioWeights(w))
    }

    pub fn uniform(m: usize) -> Self {
        PortfolioWeights(vec![1.0 / m as f64; m])
    }

    /// Normalize a nonnegative vector onto the simplex.
    pub fn normalized(mut w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if !sum.is_finite() || sum <= 0.0 || w.iter().any(|&x| x < 0.0) {
            return Err(CoreError::OffSimplex(format!("cannot normalize {w:?}")));
        }
        w.iter_mut().for_each(|x| *x /= sum);
        Ok(PortfolioWeights(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// m x 1 x 1 tensor view for network input.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_assets(&self.0)
    }

    /// Half L1 distance, the standard rebalancing-volume convention.
    pub fn turnover_to(&self, other: &PortfolioWeights) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Proportional commission rates for sells and purchases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommissionRates {
    pub sell: f64,
    pub purchase: f64,
}

impl CommissionRates {
    pub fn new(sell: f64, purchase: f64) -> Result<Self> {
        for (name, r) in [("sell", sell), ("purchase", purchase)] {
            if !(0.0..1.0).contains(&r) {
                return Err(CoreError::InvalidArgument(format!(
                    "{name} commission rate {r} must lie in [0, 1)"
                )));
            }
        }
        Ok(CommissionRates { sell, purchase })
    }

    pub fn zero() -> Self {
        CommissionRates {
            sell: 0.0,
            purchase: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sell == 0.0 && self.purchase == 0.0
    }
}

/// Cost factor when rebalancing at full (nu = 1) accounting:
/// f(1, w', w) = 1 - c_s sum (w'_i - w_i)+ - c_p sum (w_i - w'_i)+.
pub fn cost_factor_at_one(w_prime: &[f64], w: &[f64], rates: &CommissionRates) -> f64 {
    let mut sells = 0.0;
    let mut buys = 0.0;
    for (wp, wn) in w_prime.iter().zip(w) {
        sells += (wp - wn).max(0.0);
        buys += (wn - wp).max(0.0);
    }
    1.0 - rates.sell * sells - rates.purchase * buys
}

/// f(nu, w', w) for the fixed-point equation.
pub fn netting_map(nu: f64, w_prime: &[f64], w: &[f64], rates: &CommissionRates) -> f64 {
    let mut sells = 0.0;
    let mut buys = 0.0;
    for (wp, wn) in w_prime.iter().zip(w) {
        sells += (wp - nu * wn).max(0.0);
        buys += (nu * wn - wp).max(0.0);
    }
    1.0 - rates.sell * sells - rates.purchase * buys
}

/// g(nu) = nu - f(nu, w', w); strictly increasing on [0, 1].
pub fn netting_gap(nu: f64, w_prime: &[f64], w: &[f64], rates: &CommissionRates) -> f64 {
    nu - netting_map(nu, w_prime, w, rates)
}

/// Solve nu = f(nu, w', w) by bisection on [0, 1].
///
/// When no trade happens (w' == w) or both rates are zero, nu = 1 exactly and
/// no iteration runs. Otherwise the bracket g(0) < 0 < g(1) is checked and
/// bisection narrows it below `tol`, which bounds |nu - f(nu)| by tol as well
/// since g has slope at most 1 + c_s + c_p.
pub fn solve_nu(
    w_prime: &PortfolioWeights,
    w: &PortfolioWeights,
    rates: &CommissionRates,
    tol: f64,
) -> Result<f64> {
    if tol <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "tol {tol} must be positive"
        )));
    }
    if w_prime.len() != w.len() {
        return Err(CoreError::shape(
            "solve_nu",
            format!("{} assets", w_prime.len()),
            format!("{}", w.len()),
        ));
    }
    if rates.is_zero() || w_prime.as_slice() == w.as_slice() {
        return Ok(1.0);
    }
    let wp = w_prime.as_slice();
    let wn = w.as_slice();
    let g0 = netting_gap(0.0, wp, wn, rates);
    let g1 = netting_gap(1.0, wp, wn, rates);
    debug_assert!(g0 < 0.0, "g(0) = c_s - 1 must be negative, got {g0}");
    if g1 <= 0.0 {
        // No-trade edge: f(1) = 1 within roundoff.
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // ceil(log2(1/tol)) halvings bring the bracket below tol
    let max_iter = (1.0 / tol).log2().ceil() as usize;
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if netting_gap(mid, wp, wn, rates) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Outcome of one market period followed by a rebalance.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Netting factor of the end-of-period rebalance, in (0, 1].
    pub nu: f64,
    /// ln(nu) + ln(xi . w_prev): market gain of the period plus the cost of
    /// the rebalance closing it.
    pub log_return: f64,
    /// Pre-rebalance end-of-period value p'.
    pub end_value: f64,
    /// Drifted weights w' before the rebalance.
    pub drifted_weights: PortfolioWeights,
}

/// Evolve value p and weights w_prev under relatives xi, then rebalance into
/// w_new with exact netting.
pub fn step(
    p_prev: f64,
    w_prev: &PortfolioWeights,
    xi: &[f64],
    w_new: &PortfolioWeights,
    rates: &CommissionRates,
) -> Result<StepOutcome> {
    if xi.len() != w_prev.len() || w_new.len() != w_prev.len() {
        return Err(CoreError::shape(
            "step",
            format!("{} assets", w_prev.len()),
            format!("xi {} / w_new {}", xi.len(), w_new.len()),
        ));
    }
    if xi.iter().any(|&x| !x.is_finite() || x <= 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "price relatives must be positive and finite: {xi:?}"
        )));
    }
    let gross: f64 = xi.iter().zip(w_prev.as_slice()).map(|(x, w)| x * w).sum();
    let end_value = p_prev * gross;
    let drifted = PortfolioWeights::normalized(
        xi.iter()
            .zip(w_prev.as_slice())
            .map(|(x, w)| x * w)
            .collect(),
    )?;
    let nu = solve_nu(&drifted, w_new, rates, 1e-10)?;
    Ok(StepOutcome {
        nu,
        log_return: nu.ln() + gross.ln(),
        end_value,
        drifted_weights: drifted,
    })
}

/// Differentiable approximation of the period log return:
/// r = ln f(1, w', w) + ln(xi_next . w).
pub fn reward_approx(
    w_prime: &PortfolioWeights,
    w_new: &PortfolioWeights,
    xi_next: &[f64],
    rates: &CommissionRates,
) -> Result<f64> {
    let cost = cost_factor_at_one(w_prime.as_slice(), w_new.as_slice(), rates);
    if cost <= 0.0 {
        return Err(CoreError::InfeasibleTurnover { cost: 1.0 - cost });
    }
    let gross: f64 = xi_next
        .iter()
        .zip(w_new.as_slice())
        .map(|(x, w)| x * w)
        .sum();
    if gross <= 0.0 {
        return Err(CoreError::InvalidArgument(
            "non-positive gross return".into(),
        ));
    }
    Ok(cost.ln() + gross.ln())
}

/// Tape form of [`reward_approx`]; both weight arguments are m x 1 x 1 nodes
/// so gradients flow into the actions and through the drift recursion.
pub fn reward_approx_var(
    tape: &mut Tape,
    w_prime: Var,
    w_new: Var,
    xi_next: &[f64],
    rates: &CommissionRates,
) -> Result<Var> {
    let sells = {
        let diff = tape.sub(w_prime, w_new)?;
        let pos = tape.relu(diff);
        tape.sum_all(pos)
    };
    let buys = {
        let diff = tape.sub(w_new, w_prime)?;
        let pos = tape.relu(diff);
        tape.sum_all(pos)
    };
    let sell_term = tape.affine(sells, -rates.sell, 1.0);
    let buy_term = tape.affine(buys, -rates.purchase, 0.0);
    let cost = tape.add(sell_term, buy_term)?;
    if tape.value(cost).scalar_value() <= 0.0 {
        return Err(CoreError::InfeasibleTurnover {
            cost: 1.0 - tape.value(cost).scalar_value(),
        });
    }
    let ln_cost = tape.ln(cost)?;
    let xi = tape.constant(Tensor3::from_assets(xi_next));
    let prod = tape.hadamard(xi, w_new)?;
    let gross = tape.sum_all(prod);
    let ln_gross = tape.ln(gross)?;
    tape.add(ln_cost, ln_gross)
}

/// Post-market weights: xi o w / (xi . w), renormalized exactly.
pub fn drift_weights(w: &PortfolioWeights, xi: &[f64]) -> Result<PortfolioWeights> {
    if xi.len() != w.len() {
        return Err(CoreError::shape(
            "drift_weights",
            format!("{} assets", w.len()),
            format!("{}", xi.len()),
        ));
    }
    if xi.iter().any(|&x| !x.is_finite() || x <= 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "price relatives must be positive and finite: {xi:?}"
        )));
    }
    PortfolioWeights::normalized(xi.iter().zip(w.as_slice()).map(|(x, w)| x * w).collect())
}

/// Tape form of [`drift_weights`] for the endogenous state recursion.
pub fn drift_weights_var(tape: &mut Tape, w: Var, xi: &[f64]) -> Result<Var> {
    let xi_node = tape.constant(Tensor3::from_assets(xi));
    let num = tape.hadamard(xi_node, w)?;
    let den = tape.sum_all(num);
    tape.div_broadcast(num, den)
}
