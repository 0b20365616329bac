//! Cost-exact backtesting and evaluation metrics.
//!
//! The daily loop: drift yesterday's allocation under the realized relatives,
//! query the policy in eval mode, charge the exact netting factor from the
//! bisection solver, and record the period log return
//! `ln(nu) + ln(xi . w)`. Metrics: annualized return of the accumulated
//! value, prorated volatility, trajectory Sharpe ratio, maximum drawdown,
//! average turnover (half-L1 rebalancing distance), and the daily hit rate
//! against an equal-weight portfolio rebalanced under the same cost model.

use crate::data::{MarketWindow, SplitId};
use crate::env::{drift_weights, solve_nu, CommissionRates, PortfolioWeights};
use crate::error::{CoreError, Result};
use crate::policy::{ForwardMode, PolicyParams};
use serde::{Deserialize, Serialize};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
const NU_TOL: f64 = 1e-10;

/// Which decision rule the backtest runs.
pub enum PolicyKind<'a> {
    Network(&'a PolicyParams),
    /// Rebalance to 1/m every day, paying the same costs.
    EqualWeight {
        lookback: usize,
    },
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

fn report_format_version() -> u32 {
    REPORT_FORMAT_VERSION
}

/// Metrics plus the daily series they were computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    #[serde(default = "report_format_version")]
    pub format_version: u32,
    pub annual_return: f64,
    pub annual_vol: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    /// Fraction of days outperforming equal weight; absent for the
    /// equal-weight portfolio itself.
    pub daily_hit_rate: Option<f64>,
    pub turnover: f64,
    /// Daily portfolio values, starting at 1.
    pub pv_series: Vec<f64>,
    /// Daily log returns (one fewer than pv entries).
    pub log_returns: Vec<f64>,
    /// Chosen allocations per decision day.
    pub weights: Vec<Vec<f64>>,
    /// True when the return variance was too small for a Sharpe ratio; the
    /// reported value is then 0.
    pub degenerate_sharpe: bool,
}

/// Walk the policy through a split with exact transaction-cost accounting.
pub fn backtest(
    policy: PolicyKind,
    window: &MarketWindow,
    split: SplitId,
    rates: &CommissionRates,
    initial_weights: Option<PortfolioWeights>,
) -> Result<BacktestReport> {
    let walk = run_walk(&policy, window, split, rates, initial_weights.clone())?;
    let ew_returns = match policy {
        PolicyKind::EqualWeight { .. } => None,
        PolicyKind::Network(params) => {
            let ew = run_walk(
                &PolicyKind::EqualWeight {
                    lookback: params.spec().lookback,
                },
                window,
                split,
                rates,
                initial_weights,
            )?;
            Some(ew.log_returns)
        }
    };
    Ok(annualized_metrics(
        walk.log_returns,
        walk.pv_series,
        walk.weights,
        &walk.turnovers,
        ew_returns.as_deref(),
    ))
}

struct Walk {
    pv_series: Vec<f64>,
    log_returns: Vec<f64>,
    weights: Vec<Vec<f64>>,
    turnovers: Vec<f64>,
}

fn run_walk(
    policy: &PolicyKind,
    window: &MarketWindow,
    split: SplitId,
    rates: &CommissionRates,
    initial_weights: Option<PortfolioWeights>,
) -> Result<Walk> {
    let lookback = match policy {
        PolicyKind::Network(params) => params.spec().lookback,
        PolicyKind::EqualWeight { lookback } => *lookback,
    };
    let splits = window
        .splits
        .as_ref()
        .ok_or_else(|| CoreError::InvalidArgument("no splits defined".into()))?;
    let range = splits.range(split);
    let m = window.asset_count();
    if range.end < range.start + lookback + 1 {
        return Err(CoreError::Data(format!(
            "{split:?} split {range:?} shorter than lookback + 1 = {}",
            lookback + 1
        )));
    }
    if let PolicyKind::Network(params) = policy {
        if params.spec().assets != m {
            return Err(CoreError::shape(
                "backtest",
                format!("{} assets", params.spec().assets),
                format!("{m}"),
            ));
        }
    }

    let first_decision = range.start + lookback - 1;
    let mut drifted = initial_weights.unwrap_or_else(|| PortfolioWeights::uniform(m));
    if drifted.len() != m {
        return Err(CoreError::shape(
            "backtest initial weights",
            format!("{m}"),
            format!("{}", drifted.len()),
        ));
    }
    let mut pv = 1.0;
    let mut walk = Walk {
        pv_series: vec![1.0],
        log_returns: Vec::new(),
        weights: Vec::new(),
        turnovers: Vec::new(),
    };

    for day in first_decision..range.end - 1 {
        let chosen = match policy {
            PolicyKind::Network(params) => {
                let state = window.features_window(split, day + 1 - lookback, lookback)?;
                params.forward_policy(&state, &drifted, ForwardMode::Eval)?
            }
            PolicyKind::EqualWeight { .. } => PortfolioWeights::uniform(m),
        };
        let nu = solve_nu(&drifted, &chosen, rates, NU_TOL)?;
        walk.turnovers.push(drifted.turnover_to(&chosen));
        walk.weights.push(chosen.as_slice().to_vec());

        let xi = window.relatives_at(day + 1);
        let gross: f64 = xi.iter().zip(chosen.as_slice()).map(|(x, w)| x * w).sum();
        let zeta = nu.ln() + gross.ln();
        pv *= zeta.exp();
        walk.pv_series.push(pv);
        walk.log_returns.push(zeta);
        drifted = drift_weights(&chosen, &xi)?;
    }
    Ok(walk)
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Maximum drawdown: the largest relative loss from a running peak.
pub fn max_drawdown(pv: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd = 0.0f64;
    for &v in pv {
        peak = peak.max(v);
        mdd = mdd.max(1.0 - v / peak);
    }
    mdd
}

/// Compute the six evaluation metrics from daily series: annualized return of
/// the accumulated value (pv_N^(252/N) - 1 for pv_0 = 1), prorated volatility
/// (sample std of daily log returns times sqrt(252)), their trajectory Sharpe
/// ratio, maximum drawdown of the value path, mean turnover (half-L1 distance
/// between drifted and chosen weights), and the fraction of days beating the
/// equal-weight daily log returns when provided.
pub fn annualized_metrics(
    log_returns: Vec<f64>,
    pv_series: Vec<f64>,
    weights: Vec<Vec<f64>>,
    turnovers: &[f64],
    ew_log_returns: Option<&[f64]>,
) -> BacktestReport {
    let n = log_returns.len().max(1);
    let final_pv = pv_series.last().copied().unwrap_or(1.0);
    let annual_return = final_pv.powf(TRADING_DAYS_PER_YEAR / n as f64) - 1.0;
    let std = sample_std(&log_returns);
    let annual_vol = std * TRADING_DAYS_PER_YEAR.sqrt();
    let mean = log_returns.iter().sum::<f64>() / n as f64;
    let degenerate = std <= 1e-12;
    let sharpe = if degenerate { 0.0 } else { mean / std };
    let daily_hit_rate = ew_log_returns.map(|ew| {
        let wins = log_returns.iter().zip(ew).filter(|(a, b)| a > b).count();
        wins as f64 / log_returns.len().max(1) as f64
    });
    let turnover = turnovers.iter().sum::<f64>() / turnovers.len().max(1) as f64;
    BacktestReport {
        format_version: REPORT_FORMAT_VERSION,
        annual_return,
        annual_vol,
        sharpe,
        max_drawdown: max_drawdown(&pv_series),
        daily_hit_rate,
        turnover,
        pv_series,
        log_returns,
        weights,
        degenerate_sharpe: degenerate,
    }
}

/// Sample standard deviation across runs, e.g. of final annual returns over
/// random asset orderings.
pub fn permutation_dispersion(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(CoreError::InvalidArgument(
            "dispersion needs at least two runs".into(),
        ));
    }
    Ok(sample_std(values))
}

/// Mean and standard deviation of each metric over a set of runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub runs: usize,
    pub mean: MetricRow,
    pub std: MetricRow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub annual_return: f64,
    pub annual_vol: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub daily_hit_rate: f64,
    pub turnover: f64,
}

impl ExperimentSummary {
    pub fn from_reports(reports: &[BacktestReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(CoreError::InvalidArgument("no reports to summarize".into()));
        }
        let columns: Vec<Vec<f64>> = (0..6)
            .map(|k| {
                reports
                    .iter()
                    .map(|r| match k {
                        0 => r.annual_return,
                        1 => r.annual_vol,
                        2 => r.sharpe,
                        3 => r.max_drawdown,
                        4 => r.daily_hit_rate.unwrap_or(f64::NAN),
                        _ => r.turnover,
                    })
                    .collect()
            })
            .collect();
        let mean: Vec<f64> = columns
            .iter()
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let std: Vec<f64> = columns.iter().map(|c| sample_std(c)).collect();
        let row = |v: &[f64]| MetricRow {
            annual_return: v[0],
            annual_vol: v[1],
            sharpe: v[2],
            max_drawdown: v[3],
            daily_hit_rate: v[4],
            turnover: v[5],
        };
        Ok(ExperimentSummary {
            runs: reports.len(),
            mean: row(&mean),
            std: row(&std),
        })
    }

    /// CSV rows in the column order annual_return, annual_vol, sharpe, mdd,
    /// daily_hit_rate, turnover. An undefined hit rate (the equal-weight
    /// portfolio has none) prints as "-".
    pub fn to_csv(&self, label: &str) -> String {
        let fmt = |v: f64| {
            if v.is_nan() {
                "-".to_string()
            } else {
                format!("{v}")
            }
        };
        format!(
            "{label},mean,{},{},{},{},{},{}\n{label},std,{},{},{},{},{},{}\n",
            self.mean.annual_return,
            self.mean.annual_vol,
            self.mean.sharpe,
            self.mean.max_drawdown,
            fmt(self.mean.daily_hit_rate),
            self.mean.turnover,
            self.std.annual_return,
            self.std.annual_vol,
            self.std.sharpe,
            self.std.max_drawdown,
            fmt(self.std.daily_hit_rate),
            self.std.turnover,
        )
    }
}

pub const SUMMARY_CSV_HEADER: &str =
    "label,stat,annual_return,annual_vol,sharpe,max_drawdown,daily_hit_rate,turnover\n";
