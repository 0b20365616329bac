//! Implementations of the five subcommands.

use crate::config::{config_hash, write_manifest, RunConfig};
use crate::{CliError, CliResult};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use wavecorr_core::blocks::AssetPermutation;
use wavecorr_core::data::{
    generate_synthetic, load_csv, to_relatives, write_csv, MarketWindow, PlantedLeadLag, SplitId,
    Splits, SynthConfig,
};
use wavecorr_core::env::CommissionRates;
use wavecorr_core::metrics::{
    backtest, BacktestReport, ExperimentSummary, PolicyKind, SUMMARY_CSV_HEADER,
};
use wavecorr_core::policy::{PolicyParams, PolicySpec};
use wavecorr_core::rng::seed_rng;
use wavecorr_core::trainer::{train, TrainingLog};
use wavecorr_core::verify::run_suites;

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct GenDataSettings {
    pub assets: usize,
    pub days: usize,
    pub seed: u64,
    pub mu: f64,
    pub sigma: f64,
    pub rho: f64,
    pub planted: Vec<PlantedLeadLag>,
}

pub fn gen_data(settings: &GenDataSettings, out_dir: &Path) -> CliResult<()> {
    if settings.assets < 1 {
        return Err(CliError::Config("need at least one asset".into()));
    }
    if !(-1.0 / (settings.assets.max(2) as f64 - 1.0) < settings.rho && settings.rho < 1.0) {
        return Err(CliError::Config(format!(
            "equicorrelation {} is not positive definite for {} assets",
            settings.rho, settings.assets
        )));
    }
    let m = settings.assets;
    let corr = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| if i == j { 1.0 } else { settings.rho })
                .collect()
        })
        .collect();
    let cfg = SynthConfig {
        assets: m,
        days: settings.days,
        mu: vec![settings.mu; m],
        sigma: vec![settings.sigma; m],
        corr,
        seed: settings.seed,
        start_price: 100.0,
        start_date: "2015-01-02".into(),
        planted: settings.planted.clone(),
    };
    let table = generate_synthetic(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    ensure_dir(out_dir)?;
    write_csv(&table, &out_dir.join("data.csv")).map_err(runtime)?;
    write_manifest(out_dir, "gen-data", settings.seed, settings).map_err(runtime)?;
    println!(
        "wrote {} days x {} assets to {}",
        settings.days,
        m,
        out_dir.join("data.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn load_window(cfg: &RunConfig) -> CliResult<MarketWindow> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("no data file configured".into()))?;
    let table = load_csv(data).map_err(|e| CliError::Config(e.to_string()))?;
    let window = to_relatives(&table).map_err(|e| CliError::Config(e.to_string()))?;
    let n = window.len();
    let splits = Splits::from_fractions(n, cfg.train_frac, cfg.val_frac)
        .map_err(|e| CliError::Config(e.to_string()))?;
    window
        .with_splits(splits)
        .map_err(|e| CliError::Config(e.to_string()))
}

fn write_log(path: &Path, log: &TrainingLog) -> CliResult<()> {
    let mut out = String::new();
    for e in &log.episodes {
        let _ = writeln!(
            out,
            "{}",
            serde_json::json!({"type": "episode", "epoch": e.epoch, "step": e.step,
                "sharpe": e.sharpe, "objective": e.objective,
                "learning_rate": e.learning_rate, "grad_norm": e.grad_norm})
        );
    }
    for v in &log.validations {
        let _ = writeln!(
            out,
            "{}",
            serde_json::json!({"type": "validation", "epoch": v.epoch,
                "sharpe": v.sharpe, "improved": v.improved})
        );
    }
    let _ = writeln!(
        out,
        "{}",
        serde_json::json!({"type": "summary", "epochs_run": log.epochs_run,
            "stopped_early": log.stopped_early, "skipped_degenerate": log.skipped_degenerate})
    );
    std::fs::write(path, out).map_err(runtime)
}

/// Train one or more seeds (threaded, merged by run index); write checkpoints,
/// logs, test-split reports, and a cross-seed summary when multi-seeded.
pub fn train_cmd(cfg: &RunConfig, seeds: usize, out_dir: &Path) -> CliResult<()> {
    cfg.validate_paths().map_err(CliError::Config)?;
    cfg.train
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let window = load_window(cfg)?;
    let m = window.asset_count();
    let d = window.channel_count();
    let spec = PolicySpec::with_corr(m, cfg.train.lookback, d, cfg.corr_kind)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let rates = cfg
        .train
        .rates()
        .map_err(|e| CliError::Config(e.to_string()))?;
    ensure_dir(out_dir)?;

    let run_one = |k: usize| -> Result<(PolicyParams, TrainingLog, BacktestReport), CliError> {
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = cfg.train.seed.wrapping_add(k as u64);
        let mut spec_k = spec.clone();
        spec_k.dropout_rate = cfg.train.dropout_rate;
        let params = PolicyParams::init(spec_k, train_cfg.seed).map_err(runtime)?;
        let outcome = train(params, &window, &train_cfg).map_err(runtime)?;
        let report = backtest(
            PolicyKind::Network(&outcome.params),
            &window,
            SplitId::Test,
            &rates,
            None,
        )
        .map_err(runtime)?;
        Ok((outcome.params, outcome.log, report))
    };

    let mut results: Vec<Option<Result<_, CliError>>> = (0..seeds).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..seeds)
            .map(|k| scope.spawn(move || (k, run_one(k))))
            .collect();
        for h in handles {
            let (k, res) = h.join().expect("worker panicked");
            results[k] = Some(res);
        }
    });

    let mut reports = Vec::with_capacity(seeds);
    for (k, res) in results.into_iter().enumerate() {
        let (params, log, report) = res.expect("worker ran")?;
        let suffix = if seeds == 1 {
            String::new()
        } else {
            format!("_seed{k}")
        };
        params
            .save_checkpoint(&out_dir.join(format!("checkpoint{suffix}.json")))
            .map_err(runtime)?;
        write_log(&out_dir.join(format!("training_log{suffix}.jsonl")), &log)?;
        std::fs::write(
            out_dir.join(format!("report{suffix}.json")),
            serde_json::to_string_pretty(&report).map_err(runtime)?,
        )
        .map_err(runtime)?;
        println!(
            "seed {k}: epochs {} val-best {} test SR {:.4} annual return {:.4}",
            log.epochs_run,
            log.validations
                .iter()
                .map(|v| v.sharpe)
                .fold(f64::NEG_INFINITY, f64::max),
            report.sharpe,
            report.annual_return
        );
        reports.push(report);
    }

    if seeds > 1 {
        let summary = ExperimentSummary::from_reports(&reports).map_err(runtime)?;
        let mut csv = String::from(SUMMARY_CSV_HEADER);
        csv.push_str(&summary.to_csv("trained"));
        std::fs::write(out_dir.join("summary.csv"), csv).map_err(runtime)?;
    }
    write_manifest(out_dir, "train", cfg.train.seed, cfg).map_err(runtime)?;
    println!("config hash {}", config_hash(cfg));
    Ok(())
}

// ---------------------------------------------------------------------------
// backtest
// ---------------------------------------------------------------------------

pub struct BacktestArgs {
    pub checkpoint: Option<PathBuf>,
    pub equal_weight: bool,
    pub lookback: usize,
    pub rates: Vec<f64>,
    pub permutation_checks: usize,
    pub seed: u64,
}

fn write_report(dir: &Path, label: &str, report: &BacktestReport) -> CliResult<()> {
    std::fs::write(
        dir.join(format!("report_{label}.json")),
        serde_json::to_string_pretty(report).map_err(runtime)?,
    )
    .map_err(runtime)?;
    // plot-ready portfolio-value series
    let mut csv = String::from("index,pv\n");
    for (i, pv) in report.pv_series.iter().enumerate() {
        let _ = writeln!(csv, "{i},{pv}");
    }
    std::fs::write(dir.join(format!("pv_{label}.csv")), csv).map_err(runtime)?;
    Ok(())
}

pub fn backtest_cmd(cfg: &RunConfig, args: &BacktestArgs, out_dir: &Path) -> CliResult<()> {
    cfg.validate_paths().map_err(CliError::Config)?;
    let window = load_window(cfg)?;
    ensure_dir(out_dir)?;

    let params = match (&args.checkpoint, args.equal_weight) {
        (Some(path), false) => {
            Some(PolicyParams::load_checkpoint(path).map_err(|e| CliError::Config(e.to_string()))?)
        }
        (None, true) => None,
        (Some(_), true) => {
            return Err(CliError::Config(
                "--ew and --checkpoint are mutually exclusive".into(),
            ))
        }
        (None, false) => {
            return Err(CliError::Config(
                "either --checkpoint or --ew is required".into(),
            ))
        }
    };

    for &rate in &args.rates {
        let rates =
            CommissionRates::new(rate, rate).map_err(|e| CliError::Config(e.to_string()))?;
        let label = format!("cr{}", rate);
        let report = match &params {
            Some(p) => backtest(PolicyKind::Network(p), &window, SplitId::Test, &rates, None),
            None => backtest(
                PolicyKind::EqualWeight {
                    lookback: args.lookback,
                },
                &window,
                SplitId::Test,
                &rates,
                None,
            ),
        }
        .map_err(runtime)?;
        println!(
            "rate {rate}: annual return {:.4} vol {:.4} SR {:.4} mdd {:.4} hit {} turnover {:.4}",
            report.annual_return,
            report.annual_vol,
            report.sharpe,
            report.max_drawdown,
            report
                .daily_hit_rate
                .map_or("-".to_string(), |h| format!("{h:.4}")),
            report.turnover
        );
        write_report(out_dir, &label, &report)?;

        if args.permutation_checks > 0 {
            let p = params.as_ref().ok_or_else(|| {
                CliError::Config("--permutation-check needs a network checkpoint".into())
            })?;
            let base = backtest(PolicyKind::Network(p), &window, SplitId::Test, &rates, None)
                .map_err(runtime)?;
            let mut rng = seed_rng(args.seed);
            let sigmas: Vec<AssetPermutation> = (0..args.permutation_checks)
                .map(|_| AssetPermutation::random(window.asset_count(), &mut rng))
                .collect();
            let mut results: Vec<Option<Result<f64, CliError>>> =
                (0..sigmas.len()).map(|_| None).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = sigmas
                    .iter()
                    .enumerate()
                    .map(|(k, sigma)| {
                        let (window, p, rates) = (&window, p, &rates);
                        scope.spawn(move || {
                            let run = || -> Result<f64, CliError> {
                                let witness = p.network_witness(sigma).map_err(runtime)?;
                                let win_p = window.permute_assets(sigma).map_err(runtime)?;
                                let rep = backtest(
                                    PolicyKind::Network(&witness),
                                    &win_p,
                                    SplitId::Test,
                                    rates,
                                    None,
                                )
                                .map_err(runtime)?;
                                Ok((rep.annual_return - base.annual_return)
                                    .abs()
                                    .max((rep.sharpe - base.sharpe).abs())
                                    .max((rep.max_drawdown - base.max_drawdown).abs())
                                    .max((rep.turnover - base.turnover).abs()))
                            };
                            (k, run())
                        })
                    })
                    .collect();
                for h in handles {
                    let (k, res) = h.join().expect("worker panicked");
                    results[k] = Some(res);
                }
            });
            let mut max_diff = 0.0f64;
            for res in results.into_iter() {
                max_diff = max_diff.max(res.expect("worker ran")?);
            }
            let ok = max_diff <= 1e-9;
            println!(
                "{} permutation witness checks at rate {rate}: max metric diff {max_diff:.3e}",
                args.permutation_checks
            );
            if !ok {
                return Err(CliError::VerificationFailed(format!(
                    "permutation witness metric difference {max_diff:.3e} exceeds 1e-9"
                )));
            }
        }
    }
    write_manifest(out_dir, "backtest", args.seed, cfg).map_err(runtime)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

pub fn verify_cmd(suite: &str, seed: u64) -> CliResult<()> {
    let reports = run_suites(suite, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let mut all_ok = true;
    for report in &reports {
        print!("{}", report.render());
        all_ok &= report.passed();
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::VerificationFailed(format!(
            "suite '{suite}' has failing checks"
        )))
    }
}

// ---------------------------------------------------------------------------
// summarize
// ---------------------------------------------------------------------------

/// Aggregate report JSON files into a mean/std CSV.
pub fn summarize_cmd(reports: &[PathBuf], label: &str, out: Option<&Path>) -> CliResult<()> {
    if reports.is_empty() {
        return Err(CliError::Config("no report files given".into()));
    }
    let mut parsed = Vec::with_capacity(reports.len());
    for path in reports {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let report: BacktestReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid report {}: {e}", path.display())))?;
        parsed.push(report);
    }
    let summary = ExperimentSummary::from_reports(&parsed).map_err(runtime)?;
    let mut csv = String::from(SUMMARY_CSV_HEADER);
    csv.push_str(&summary.to_csv(label));
    match out {
        Some(path) => std::fs::write(path, csv).map_err(runtime)?,
        None => print!("{csv}"),
    }
    Ok(())
}
