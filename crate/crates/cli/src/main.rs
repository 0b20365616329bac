//! Command-line interface: synthetic data generation, training, cost-exact
//! backtesting, property verification, and report summarization.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage/config error,
//! 3 runtime/data error.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;
use wavecorr_core::data::PlantedLeadLag;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    VerificationFailed(String),
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "wavecorr",
    version,
    about = "Permutation-invariant convolutional portfolio policies: train, backtest, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic correlated-GBM price CSV (optionally with a
    /// planted lead-lag signal) plus a manifest.
    GenData(GenDataArgs),
    /// Train a policy (optionally many seeds in parallel) and backtest it on
    /// the test split.
    Train(TrainArgs),
    /// Backtest a checkpoint or the equal-weight baseline on the test split.
    Backtest(BacktestArgs),
    /// Run a property suite: bisection, invariance, counterexample,
    /// augmented, gradient, or all.
    Verify(VerifyArgs),
    /// Aggregate backtest report JSON files into a mean/std CSV.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of assets.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Number of daily rows.
    #[arg(long, default_value_t = 3000)]
    days: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Per-day drift of log prices.
    #[arg(long, default_value_t = 0.0002)]
    mu: f64,
    /// Per-day volatility of log prices.
    #[arg(long, default_value_t = 0.012)]
    sigma: f64,
    /// Equicorrelation of the shocks.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Plant lead-lag dependencies "leader,follower,coeff[;leader,follower,coeff...]".
    #[arg(long, value_name = "L,F,C;...")]
    planted: Option<String>,
    #[arg(long, default_value = "out/gen-data")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train this many seeds (base seed, base+1, ...) on worker threads.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Commission rate applied to both sells and purchases.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Maximum holding per asset; enables the penalized objective.
    #[arg(long)]
    w_max: Option<f64>,
    /// Use the order-sensitive cross-asset layer instead of the
    /// permutation-invariant one.
    #[arg(long)]
    zhang_corr: bool,
}

#[derive(Args)]
struct BacktestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Backtest the equal-weight baseline instead of a checkpoint.
    #[arg(long)]
    ew: bool,
    /// Lookback used to align the equal-weight walk.
    #[arg(long, default_value_t = 32)]
    lookback: usize,
    /// Comma-separated commission rates to sweep.
    #[arg(long, default_value = "0.0005")]
    rates: String,
    /// Rerun under N random asset permutations with witnessed parameters and
    /// require identical metrics.
    #[arg(long, default_value_t = 0)]
    permutation_check: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// bisection | invariance | counterexample | augmented | gradient | all
    suite: String,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Report JSON files.
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "runs")]
    label: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_planted(text: &str) -> CliResult<Vec<PlantedLeadLag>> {
    text.split(';')
        .map(|triple| {
            let parts: Vec<&str> = triple.split(',').collect();
            if parts.len() != 3 {
                return Err(CliError::Config(format!(
                    "--planted expects 'leader,follower,coefficient' triples, got '{triple}'"
                )));
            }
            let leader = parts[0]
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad leader index '{}'", parts[0])))?;
            let follower = parts[1]
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad follower index '{}'", parts[1])))?;
            let coefficient = parts[2]
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad coefficient '{}'", parts[2])))?;
            Ok(PlantedLeadLag {
                leader,
                follower,
                coefficient,
            })
        })
        .collect()
}

fn resolve_config(config: &Option<PathBuf>) -> CliResult<RunConfig> {
    match config {
        Some(path) => RunConfig::load(path).map_err(CliError::Config),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(args) => {
            let planted = match &args.planted {
                Some(text) => parse_planted(text)?,
                None => Vec::new(),
            };
            let settings = commands::GenDataSettings {
                assets: args.m,
                days: args.days,
                seed: args.seed,
                mu: args.mu,
                sigma: args.sigma,
                rho: args.rho,
                planted,
            };
            commands::gen_data(&settings, &args.out)
        }
        Command::Train(args) => {
            let mut cfg = resolve_config(&args.config)?;
            if let Some(data) = args.data {
                cfg.data = Some(data);
            }
            if let Some(out) = &args.out {
                cfg.output_dir = Some(out.clone());
            }
            if let Some(seed) = args.seed {
                cfg.train.seed = seed;
            }
            if let Some(epochs) = args.epochs {
                cfg.train.max_epochs = epochs;
            }
            if let Some(lr) = args.lr {
                cfg.train.learning_rate = lr;
            }
            if let Some(h) = args.lookback {
                cfg.train.lookback = h;
            }
            if let Some(t) = args.horizon {
                cfg.train.horizon = t;
            }
            if let Some(rate) = args.rate {
                cfg.train.commission_sell = rate;
                cfg.train.commission_purchase = rate;
            }
            if let Some(dropout) = args.dropout {
                cfg.train.dropout_rate = dropout;
            }
            if let Some(w_max) = args.w_max {
                cfg.train.max_weight = Some(w_max);
            }
            if args.zhang_corr {
                cfg.corr_kind = wavecorr_core::policy::CorrKind::Zhang;
            }
            if args.seeds == 0 {
                return Err(CliError::Config("--seeds must be at least 1".into()));
            }
            let out = cfg
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("out/train"));
            commands::train_cmd(&cfg, args.seeds, &out)
        }
        Command::Backtest(args) => {
            let mut cfg = resolve_config(&args.config)?;
            if let Some(data) = args.data {
                cfg.data = Some(data);
            }
            let rates: Result<Vec<f64>, _> = args
                .rates
                .split(',')
                .map(|r| r.trim().parse::<f64>())
                .collect();
            let rates =
                rates.map_err(|_| CliError::Config(format!("bad --rates '{}'", args.rates)))?;
            let out = args
                .out
                .clone()
                .or(cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out/backtest"));
            commands::backtest_cmd(
                &cfg,
                &commands::BacktestArgs {
                    checkpoint: args.checkpoint,
                    equal_weight: args.ew,
                    lookback: args.lookback,
                    rates,
                    permutation_checks: args.permutation_check,
                    seed: args.seed,
                },
                &out,
            )
        }
        Command::Verify(args) => commands::verify_cmd(&args.suite, args.seed),
        Command::Summarize(args) => {
            commands::summarize_cmd(&args.reports, &args.label, args.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::VerificationFailed(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
