use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use volregime::changepoint::{detect_changepoints, SegmentPartition, ThresholdCache, ThresholdTable};
use volregime::market_data::{load_prices, log_returns, ReturnSeries};
use volregime::regimes::{fit_regimes, regime_report, segment_densities, RegimeConfig};
use volregime::spectral::{spectral_cluster_with, SpectralOptions};
use volregime::strategy::{run_backtest, StrategyConfig};
use volregime::synthetic::{fmi_histogram, run_experiment, SyntheticSpec};
use volregime::wasserstein::{distance_matrix, DistanceMatrix, EmpiricalDist};
use volregime::{Error, Result};

use crate::manifest::sibling;
use crate::{Command, Invocation, ThresholdArgs};

pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub threshold_cache_key: Option<String>,
}

/// Change points of one series with the dates each segment spans.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectReport {
    pub ticker: String,
    pub partition: SegmentPartition,
    pub segments: Vec<DatedSegment>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatedSegment {
    pub start: usize,
    pub end: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn ticker_for(path: &Path, ticker: &Option<String>) -> String {
    ticker.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().to_uppercase())
            .unwrap_or_else(|| "SERIES".into())
    })
}

fn thresholds(args: &ThresholdArgs) -> Result<(ThresholdTable, String)> {
    let params = args.params();
    let table = ThresholdCache::from_env().get_or_calibrate(params)?;
    Ok((table, params.file_name()))
}

fn load_returns(path: &Path, ticker: &Option<String>) -> Result<ReturnSeries> {
    log_returns(&load_prices(path, &ticker_for(path, ticker))?)
}

fn dated_segments(partition: &SegmentPartition, returns: &ReturnSeries) -> Vec<DatedSegment> {
    partition
        .segments()
        .into_iter()
        .map(|r| DatedSegment {
            start: r.start,
            end: r.end,
            start_date: returns.dates()[r.start],
            end_date: returns.dates()[r.end - 1],
        })
        .collect()
}

fn segment_distributions(partition: &SegmentPartition, returns: &ReturnSeries) -> Result<Vec<EmpiricalDist>> {
    partition
        .segments()
        .into_iter()
        .enumerate()
        .map(|(i, r)| EmpiricalDist::from_slice(&returns.values()[r]).map(|d| d.with_segment(i)))
        .collect()
}

fn write_distances(path: &Path, d: &DistanceMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    d.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn run(inv: &Invocation) -> Result<Outcome> {
    let out = inv.out.clone();
    let mut artifacts = vec![out.clone()];
    let mut key = None;
    match &inv.command {
        Command::Detect(a) => {
            let (table, k) = thresholds(&a.thresholds)?;
            key = Some(k);
            let returns = load_returns(&a.prices, &a.ticker)?;
            let partition = detect_changepoints(&returns, &table)?;
            let report = DetectReport {
                ticker: returns.ticker().to_string(),
                segments: dated_segments(&partition, &returns),
                partition,
            };
            write_json(&out, &report)?;
        }
        Command::Distances(a) => {
            let returns = load_returns(&a.prices, &a.ticker)?;
            let partition = match &a.partition {
                Some(p) => {
                    let report: DetectReport = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(p)?))?;
                    if report.partition.len != returns.len() {
                        return Err(Error::Contract(format!(
                            "partition covers {} returns but {} has {}",
                            report.partition.len,
                            a.prices.display(),
                            returns.len()
                        )));
                    }
                    report.partition
                }
                None => {
                    let (table, k) = thresholds(&a.thresholds)?;
                    key = Some(k);
                    detect_changepoints(&returns, &table)?
                }
            };
            write_distances(&out, &distance_matrix(&segment_distributions(&partition, &returns)?))?;
        }
        Command::Cluster(a) => {
            let d = DistanceMatrix::read_csv(&a.distances)?;
            let options = SpectralOptions {
                k_max: a.k_max,
                ..SpectralOptions::default()
            };
            write_json(&out, &spectral_cluster_with(&d, a.method, inv.seed, &options)?)?;
        }
        Command::Regimes(a) => {
            let (table, k) = thresholds(&a.thresholds)?;
            key = Some(k);
            let returns = load_returns(&a.prices, &a.ticker)?;
            let config = RegimeConfig {
                method: a.method,
                seed: inv.seed,
                spectral: SpectralOptions::default(),
            };
            let model = fit_regimes(&returns, &table, &config)?;
            write_json(&out, &regime_report(&model))?;

            let partition_path = sibling(&out, "partition.json");
            let detect = DetectReport {
                ticker: model.ticker.clone(),
                segments: dated_segments(&model.partition, &returns),
                partition: model.partition.clone(),
            };
            write_json(&partition_path, &detect)?;

            let distances_path = sibling(&out, "distances.csv");
            write_distances(&distances_path, &model.distances)?;

            let density_path = sibling(&out, "density.csv");
            let plot = segment_densities(&model, a.density_points);
            let mut w = csv::Writer::from_path(&density_path).map_err(csv_io)?;
            w.write_record(["segment", "cluster", "bandwidth", "x", "density"]).map_err(csv_io)?;
            for c in &plot.curves {
                for (x, y) in plot.grid.iter().zip(&c.density) {
                    w.write_record([
                        c.segment.to_string(),
                        c.label.to_string(),
                        c.bandwidth.to_string(),
                        x.to_string(),
                        y.to_string(),
                    ])
                    .map_err(csv_io)?;
                }
            }
            w.flush()?;
            artifacts.extend([partition_path, distances_path, density_path]);
        }
        Command::Synth(a) => {
            let (table, k) = thresholds(&a.thresholds)?;
            key = Some(k);
            let mut spec = SyntheticSpec::new(a.family, inv.seed);
            if let Some(s) = a.segments {
                spec.segments_per_series = s;
            }
            let summary = run_experiment(&spec, a.trials, &table, &SpectralOptions::default())?;
            write_json(&out, &summary)?;
            let hist = fmi_histogram(&summary, a.histogram_bins);
            let hist_path = sibling(&out, "fmi_histogram.csv");
            let mut w = csv::Writer::from_path(&hist_path).map_err(csv_io)?;
            w.write_record(["bin_low", "bin_high", "eigengap", "zp"]).map_err(csv_io)?;
            for i in 0..hist.eigengap.len() {
                w.write_record([
                    hist.edges[i].to_string(),
                    hist.edges[i + 1].to_string(),
                    hist.eigengap[i].to_string(),
                    hist.zp[i].to_string(),
                ])
                .map_err(csv_io)?;
            }
            w.flush()?;
            artifacts.push(hist_path);
        }
        Command::Backtest(a) => {
            let (table, k) = thresholds(&a.thresholds)?;
            key = Some(k);
            let risk = load_prices(&a.risk, &ticker_for(&a.risk, &a.risk_ticker))?;
            let haven = load_prices(&a.haven, &ticker_for(&a.haven, &a.haven_ticker))?;
            let defaults = StrategyConfig::default();
            let config = StrategyConfig {
                train_window_years: a.train_years,
                lookback_grid: (a.lookback_min, a.lookback_max),
                switch_cost: a.switch_cost,
                assets: volregime::strategy::Assets {
                    risk: risk.ticker().to_string(),
                    haven: haven.ticker().to_string(),
                },
                regime: RegimeConfig {
                    method: a.method,
                    seed: inv.seed,
                    ..defaults.regime.clone()
                },
                ..defaults
            };
            let report = run_backtest(&risk, &haven, a.start, a.end, &table, &config)?;
            write_json(&out, &report)?;
            let equity = sibling(&out, "equity.csv");
            let positions = sibling(&out, "positions.csv");
            report.write_csv_files(&equity, &positions)?;
            artifacts.extend([equity, positions]);
        }
        Command::Calibrate(a) => {
            let (table, k) = thresholds(&a.thresholds)?;
            key = Some(k);
            table.save(&out)?;
        }
    }
    Ok(Outcome {
        artifacts,
        threshold_cache_key: key,
    })
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.into())
}
