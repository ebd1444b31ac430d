//! `volregime`: change points, regime clustering, synthetic studies and
//! backtests from the command line.
//!
//! Every run writes its primary artifact to `--out`, secondary artifacts next
//! to it as `<stem>.<kind>.<ext>`, and a `<stem>.manifest.json` from which
//! `volregime replay` reproduces the run exactly.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use volregime::changepoint::{
    CalibrationParams, DEFAULT_ARL0, DEFAULT_CALIBRATION_SEED, DEFAULT_MIN_SEGMENT, DEFAULT_T_MAX, DEFAULT_TRIALS,
};
use volregime::spectral::ClusterMethod;
use volregime::synthetic::Family;

use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "volregime", version, about = "Volatility change points, regimes and regime-switching backtests")]
struct Cli {
    /// Master seed. For `detect` it is the threshold calibration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Path of the primary artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: TopCommand,
}

#[derive(Debug, Subcommand)]
enum TopCommand {
    #[command(flatten)]
    Run(Command),
    /// Rerun a command from its manifest.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Detect volatility change points in a price series.
    Detect(DetectArgs),
    /// Wasserstein distances between detected segments, as CSV.
    Distances(DistancesArgs),
    /// Spectral clustering of a distance matrix.
    Cluster(ClusterArgs),
    /// Full regime model of a price series.
    Regimes(RegimesArgs),
    /// Synthetic detection and clustering study.
    Synth(SynthArgs),
    /// Walk-forward backtest of the regime-switching strategy.
    Backtest(BacktestArgs),
    /// Calibrate and cache a threshold table.
    Calibrate(CalibrateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Detect(_) => "detect",
            Command::Distances(_) => "distances",
            Command::Cluster(_) => "cluster",
            Command::Regimes(_) => "regimes",
            Command::Synth(_) => "synth",
            Command::Backtest(_) => "backtest",
            Command::Calibrate(_) => "calibrate",
        }
    }

    fn default_out(&self) -> PathBuf {
        PathBuf::from(match self {
            Command::Detect(_) => "changepoints.json",
            Command::Distances(_) => "distances.csv",
            Command::Cluster(_) => "assignment.json",
            Command::Regimes(_) => "report.json",
            Command::Synth(_) => "summary.json",
            Command::Backtest(_) => "backtest.json",
            Command::Calibrate(a) => return a.thresholds.params().file_name().into(),
        })
    }

    fn input_paths(&mut self) -> Vec<&mut PathBuf> {
        match self {
            Command::Detect(a) => vec![&mut a.prices],
            Command::Distances(a) => {
                let mut v = vec![&mut a.prices];
                v.extend(a.partition.as_mut());
                v
            }
            Command::Cluster(a) => vec![&mut a.distances],
            Command::Regimes(a) => vec![&mut a.prices],
            Command::Synth(_) | Command::Calibrate(_) => vec![],
            Command::Backtest(a) => vec![&mut a.risk, &mut a.haven],
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = DEFAULT_ARL0)]
    pub arl0: u64,
    #[arg(long, default_value_t = DEFAULT_MIN_SEGMENT)]
    pub min_segment: usize,
    #[arg(long, default_value_t = DEFAULT_T_MAX)]
    pub t_max: usize,
    /// Monte Carlo streams used for calibration.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub calibration_trials: usize,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SEED)]
    pub calibration_seed: u64,
}

impl ThresholdArgs {
    pub fn params(&self) -> CalibrationParams {
        CalibrationParams {
            arl0: self.arl0,
            min_segment: self.min_segment,
            t_max: self.t_max,
            trials: self.calibration_trials,
            seed: self.calibration_seed,
        }
    }
}

fn parse_method(s: &str) -> Result<ClusterMethod, String> {
    match s {
        "eigengap" => Ok(ClusterMethod::Eigengap),
        "zp" => Ok(ClusterMethod::Zp),
        _ => s
            .parse::<usize>()
            .ok()
            .filter(|k| *k >= 1)
            .map(ClusterMethod::Fixed)
            .ok_or_else(|| format!("expected `eigengap`, `zp` or a positive cluster count, got `{s}`")),
    }
}

fn parse_family(s: &str) -> Result<Family, String> {
    match s {
        "normal" => Ok(Family::Normal),
        "laplace" => Ok(Family::Laplace),
        _ => Err(format!("expected `normal` or `laplace`, got `{s}`")),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    /// CSV with a `date,close` header.
    #[arg(long)]
    pub prices: PathBuf,
    /// Defaults to the file stem.
    #[arg(long)]
    pub ticker: Option<String>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DistancesArgs {
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long)]
    pub ticker: Option<String>,
    /// Partition written by `detect`; detection is rerun when absent.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ClusterArgs {
    /// Distance matrix CSV written by `distances`.
    #[arg(long)]
    pub distances: PathBuf,
    /// `eigengap`, `zp`, or a fixed cluster count.
    #[arg(long, default_value = "eigengap", value_parser = parse_method)]
    pub method: ClusterMethod,
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RegimesArgs {
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long)]
    pub ticker: Option<String>,
    #[arg(long, default_value = "eigengap", value_parser = parse_method)]
    pub method: ClusterMethod,
    /// Grid points of the per-segment density curves.
    #[arg(long, default_value_t = 256)]
    pub density_points: usize,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "normal", value_parser = parse_family)]
    pub family: Family,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub histogram_bins: usize,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BacktestArgs {
    #[arg(long)]
    pub risk: PathBuf,
    #[arg(long)]
    pub haven: PathBuf,
    #[arg(long)]
    pub risk_ticker: Option<String>,
    #[arg(long)]
    pub haven_ticker: Option<String>,
    /// First trading day, `YYYY-MM-DD`.
    #[arg(long)]
    pub start: NaiveDate,
    #[arg(long)]
    pub end: NaiveDate,
    #[arg(long, default_value = "eigengap", value_parser = parse_method)]
    pub method: ClusterMethod,
    #[arg(long, default_value_t = 4)]
    pub train_years: u32,
    #[arg(long, default_value_t = 20)]
    pub lookback_min: usize,
    #[arg(long, default_value_t = 30)]
    pub lookback_max: usize,
    /// Fraction of wealth charged per switch.
    #[arg(long, default_value_t = 0.0)]
    pub switch_cost: f64,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

/// A fully resolved command line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Invocation {
    pub command: Command,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

fn absolute(path: &Path) -> volregime::Result<PathBuf> {
    Ok(std::path::absolute(path)?)
}

fn resolve(mut command: Command, seed: Option<u64>, threads: Option<usize>, out: Option<PathBuf>) -> volregime::Result<Invocation> {
    if let (Command::Detect(a), Some(s)) = (&mut command, seed) {
        a.thresholds.calibration_seed = s;
    }
    for p in command.input_paths() {
        *p = absolute(p)?;
    }
    let out = absolute(&out.unwrap_or_else(|| command.default_out()))?;
    Ok(Invocation {
        command,
        seed: seed.unwrap_or(0),
        threads,
        out,
    })
}

fn execute(invocation: Invocation) -> volregime::Result<PathBuf> {
    if let Some(n) = invocation.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    if let Some(dir) = invocation.out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let outcome = commands::run(&invocation)?;
    let manifest_path = manifest::sibling(&invocation.out, "manifest.json");
    log::info!("{} finished; manifest at {}", invocation.command.name(), manifest_path.display());
    RunManifest::new(invocation, outcome.threshold_cache_key, outcome.artifacts).save(&manifest_path)?;
    Ok(manifest_path)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        TopCommand::Run(command) => resolve(command, cli.seed, cli.threads, cli.out).and_then(execute),
        TopCommand::Replay { manifest } => RunManifest::load(&manifest).and_then(|m| {
            let mut invocation = m.invocation;
            if let Some(out) = cli.out {
                invocation.out = absolute(&out)?;
            }
            if cli.threads.is_some() {
                invocation.threads = cli.threads;
            }
            execute(invocation)
        }),
    };
    match result {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
