//! Experiment driver behind the `nrlab` binary.
//!
//! Exit codes: 0 when the run succeeds or the checked property holds, 1 when
//! a checked property fails, 2 for usage, configuration and I/O errors.

pub mod config;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use nrlab_core::analysis::{analyze, AnalysisReport, CheckpointRow};
use nrlab_core::exact::{
    best_response_nash, build_agent_game_capped, lift_smoothness_check, worst_cce_welfare_capped,
    CceLpSolution,
};
use nrlab_core::simulator::{run_repeated_game, StrategySidecar, Trace};
use nrlab_core::smoothness::{
    best_pure_lambda, check_deviation_smoothness, SmoothnessParams, SmoothnessReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, LoadedConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{location}: {message}")]
    Config { location: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Core(#[from] nrlab_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Result of a subcommand: whether the checked property held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Holds,
    Fails,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Holds => 0,
            Self::Fails => 1,
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Holds
        } else {
            Self::Fails
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, format!("line {}: {e}", e.line())))
}

pub fn write_checkpoints(path: &Path, rows: &[CheckpointRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_checkpoints(path: &Path) -> Result<Vec<CheckpointRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io_err(path, e))
}

fn output_dir(cfg: &LoadedConfig, out: Option<&Path>) -> Option<PathBuf> {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.config.output_dir.clone())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub ratio: Option<f64>,
    pub epsilon: f64,
    pub independence_gap: f64,
    pub finite_time_slack: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub lambda: f64,
    pub mu: f64,
    pub bound: f64,
    pub seeds: Vec<SeedSummary>,
    /// Mean ratio over seeds; `None` if any seed had zero welfare.
    pub mean_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    pub mean_epsilon: f64,
    pub all_within_bound: bool,
}

/// Writes `trace.csv`, `strategies.json`, `report.json` and
/// `checkpoints.csv` for one seed.
pub fn write_seed_outputs(
    dir: &Path,
    cfg: &LoadedConfig,
    trace: &Trace,
    report: &AnalysisReport,
) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let mech = cfg.mechanism()?;
    let csv_path = dir.join("trace.csv");
    let file = fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    trace.write_csv(&mech, file)?;
    write_json(&dir.join("strategies.json"), &trace.sidecar())?;
    write_json(&dir.join("report.json"), report)?;
    write_checkpoints(&dir.join("checkpoints.csv"), &report.checkpoints)
}

pub fn simulate(
    cfg: &LoadedConfig,
    out: Option<&Path>,
    workers: usize,
) -> Result<AggregateReport, CliError> {
    if cfg.config.seeds.is_empty() {
        return Err(cfg.error_at("seeds", "config lists no seeds"));
    }
    let params = cfg.smoothness(None, None)?;
    let dir = output_dir(cfg, out);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mech = cfg.mechanism()?;
    let seeds = cfg.config.seeds.clone();
    let results: Vec<Result<SeedSummary, CliError>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let sim = cfg.sim_config(seed)?;
                let trace = run_repeated_game(&sim)?;
                let report = analyze(&trace, &mech, params, &cfg.config.analysis)?;
                if let Some(d) = &dir {
                    write_seed_outputs(&d.join(format!("seed_{seed}")), cfg, &trace, &report)?;
                }
                log::info!(
                    "seed {seed}: ratio {:?}, epsilon {:.5}",
                    report.ratio,
                    report.epsilon
                );
                Ok(SeedSummary {
                    seed,
                    ratio: report.ratio,
                    epsilon: report.epsilon,
                    independence_gap: report.independence_gap,
                    finite_time_slack: report.finite_time_slack,
                    within_bound: report.welfare.within_bound,
                })
            })
            .collect()
    });
    let seeds: Vec<SeedSummary> = results.into_iter().collect::<Result<_, _>>()?;
    let ratios: Option<Vec<f64>> = seeds.iter().map(|s| s.ratio).collect();
    let aggregate = AggregateReport {
        lambda: params.lambda,
        mu: params.mu,
        bound: params.poa_bound(),
        mean_ratio: ratios
            .as_ref()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64),
        max_ratio: ratios
            .as_ref()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        mean_epsilon: seeds.iter().map(|s| s.epsilon).sum::<f64>() / seeds.len() as f64,
        all_within_bound: seeds.iter().all(|s| s.within_bound),
        seeds,
    };
    if let Some(d) = &dir {
        ensure_dir(d)?;
        write_json(&d.join("aggregate.json"), &aggregate)?;
    }
    Ok(aggregate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub deviation: String,
    pub report: SmoothnessReport,
    pub best_pure_lambda: Option<f64>,
}

pub fn certify(
    cfg: &LoadedConfig,
    lambda: Option<f64>,
    mu: Option<f64>,
    out: Option<&Path>,
) -> Result<(CertifyReport, Outcome), CliError> {
    let mech = cfg.mechanism()?;
    let rule = cfg.deviation()?;
    let params = cfg.smoothness(lambda, mu)?;
    let space = cfg.value_space();
    let report = check_deviation_smoothness(&mech, rule.as_ref(), params, &space)?;
    let best = match best_pure_lambda(&mech, params.mu, &space) {
        Ok(b) => Some(b.lambda),
        Err(nrlab_core::Error::Undefined(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let outcome = Outcome::from_bool(report.holds);
    let full = CertifyReport {
        deviation: rule.describe(),
        report,
        best_pure_lambda: best,
    };
    if let Some(d) = output_dir(cfg, out) {
        ensure_dir(&d)?;
        write_json(&d.join("certificate.json"), &full)?;
    }
    Ok((full, outcome))
}

pub fn format_certificate(c: &CertifyReport) -> String {
    let r = &c.report;
    let mut s = format!("deviation: {}\n", c.deviation);
    if r.holds {
        s += &format!(
            "certified: ({}, {})-smooth over {} (action, valuation) pairs; worst slack {:.3e}\n",
            r.lambda, r.mu, r.checked_pairs, r.worst_slack
        );
    } else {
        s += &format!(
            "refuted: ({}, {}) fails with slack {:.6}\n",
            r.lambda, r.mu, r.worst_slack
        );
        if let Some(w) = &r.witness {
            s += &format!("witness: bids {:?}, values {:?}\n", w.actions, w.values);
        }
    }
    match c.best_pure_lambda {
        Some(b) => s += &format!("best pure-deviation lambda at mu = {}: {b:.6}\n", r.mu),
        None => s += "best pure-deviation lambda undefined (every optimum is zero)\n",
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub lambda: f64,
    pub mu: f64,
    pub profiles: u64,
    pub expected_opt: f64,
    pub welfare_guarantee: f64,
    pub base: SmoothnessReport,
    pub lift: SmoothnessReport,
    pub lp: CceLpSolution,
    pub pure_nash_welfare: Option<f64>,
    pub lp_meets_guarantee: bool,
}

pub fn exact(
    cfg: &LoadedConfig,
    lambda: Option<f64>,
    mu: Option<f64>,
    out: Option<&Path>,
) -> Result<(ExactReport, Outcome), CliError> {
    let mech = cfg.mechanism()?;
    let rule = cfg.deviation()?;
    let params: SmoothnessParams = cfg.smoothness(lambda, mu)?;
    let pops = cfg.populations();
    let game = build_agent_game_capped(&mech, &pops, cfg.config.caps.tensor)?;
    let base = check_deviation_smoothness(&mech, rule.as_ref(), params, &cfg.value_space())?;
    let lift = lift_smoothness_check(&mech, &game, rule.as_ref(), params)?;
    let lp = worst_cce_welfare_capped(&game, cfg.config.caps.lp)?;
    let guarantee = params.welfare_factor() * game.expected_opt;
    let pure = best_response_nash(&game, 1000).map(|s| game.welfare(s));
    let meets = lp.objective >= guarantee - 1e-6;
    let ok = meets && (lift.holds || !base.holds);
    let report = ExactReport {
        lambda: params.lambda,
        mu: params.mu,
        profiles: game.n_profiles() as u64,
        expected_opt: game.expected_opt,
        welfare_guarantee: guarantee,
        base,
        lift,
        lp,
        pure_nash_welfare: pure,
        lp_meets_guarantee: meets,
    };
    if let Some(d) = output_dir(cfg, out) {
        ensure_dir(&d)?;
        write_json(&d.join("exact.json"), &report)?;
    }
    Ok((report, Outcome::from_bool(ok)))
}

pub fn format_exact_table(r: &ExactReport) -> String {
    let mark = |b: bool| if b { "yes" } else { "no" };
    let mut rows: Vec<(String, String)> = vec![
        ("agent-game profiles".into(), r.profiles.to_string()),
        ("(lambda, mu)".into(), format!("({}, {})", r.lambda, r.mu)),
        ("E[Opt]".into(), format!("{:.6}", r.expected_opt)),
        (
            "lambda/max(1,mu) * E[Opt]".into(),
            format!("{:.6}", r.welfare_guarantee),
        ),
        (
            "worst Bayes-CCE welfare (LP)".into(),
            format!("{:.6}", r.lp.objective),
        ),
        (
            "LP meets guarantee".into(),
            mark(r.lp_meets_guarantee).into(),
        ),
        (
            "base smoothness holds".into(),
            format!("{} (slack {:.3e})", mark(r.base.holds), r.base.worst_slack),
        ),
        (
            "lifted smoothness holds".into(),
            format!("{} (slack {:.3e})", mark(r.lift.holds), r.lift.worst_slack),
        ),
    ];
    rows.push((
        "pure Nash welfare (best response)".into(),
        r.pure_nash_welfare
            .map_or("not reached".into(), |w| format!("{w:.6}")),
    ));
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}

/// Re-runs the analysis on a stored `trace.csv` + `strategies.json` pair.
pub fn analyze_stored(
    cfg: &LoadedConfig,
    trace_dir: &Path,
    lambda: Option<f64>,
    mu: Option<f64>,
    out: Option<&Path>,
) -> Result<AnalysisReport, CliError> {
    let mech = cfg.mechanism()?;
    let sidecar: StrategySidecar = read_json(&trace_dir.join("strategies.json"))?;
    let csv_path = trace_dir.join("trace.csv");
    let file = fs::File::open(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let trace = Trace::from_parts(&mech, BufReader::new(file), sidecar)?;
    let params = cfg.smoothness(lambda, mu)?;
    let report = analyze(&trace, &mech, params, &cfg.config.analysis)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| trace_dir.to_path_buf());
    ensure_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    write_checkpoints(&dir.join("checkpoints.csv"), &report.checkpoints)?;
    Ok(report)
}

pub fn print(text: &str) {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let _ = lock.write_all(text.as_bytes());
}
