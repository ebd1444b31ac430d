//! Walk-forward two-asset switching strategy.
//!
//! Trading is split into calendar windows of `train_window_years`. Before each
//! window a regime model is fitted on the preceding window of risk-asset log
//! returns. Every day the last `n` log returns are matched to the nearest past
//! segment; if that segment belongs to one of the most volatile clusters the
//! next day is spent in the haven asset, otherwise in the risk asset.
//!
//! A decision made from data up to close `t` earns the return over `(t, t+1]`.

mod metrics;

use std::io::Write;
use std::path::Path;

use chrono::{Months, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::ThresholdTable;
use crate::market_data::{PriceSeries, ReturnSeries};
use crate::regimes::{fit_regimes, RegimeConfig, RegimeModel};
use crate::rng::derive_seed;
use crate::wasserstein::{wasserstein1, EmpiricalDist};
use crate::{Error, Result};

pub use metrics::{equity_curve, max_drawdown, metrics, Metrics};

/// Calendar slack when checking that the price history reaches a boundary
/// date, to allow for weekends and holidays.
const COVERAGE_SLACK_DAYS: u64 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assets {
    pub risk: String,
    pub haven: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub train_window_years: u32,
    /// Inclusive range of look-back lengths tried on each training window.
    pub lookback_grid: (usize, usize),
    pub trading_days_per_year: u32,
    /// Annual rate subtracted in the Sharpe and Sortino ratios.
    pub risk_free_rate: f64,
    /// Fraction of wealth lost whenever the holding changes.
    pub switch_cost: f64,
    pub assets: Assets,
    pub regime: RegimeConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            train_window_years: 4,
            lookback_grid: (20, 30),
            trading_days_per_year: 252,
            risk_free_rate: 0.0,
            switch_cost: 0.0,
            assets: Assets {
                risk: "SPY".into(),
                haven: "GLD".into(),
            },
            regime: RegimeConfig::default(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lookback_grid;
        if lo < 2 || lo > hi {
            return Err(Error::InvalidParameter(format!(
                "look-back grid [{lo}, {hi}] must be nonempty with minimum at least 2"
            )));
        }
        if self.train_window_years == 0 || self.trading_days_per_year == 0 {
            return Err(Error::InvalidParameter("window length and trading days per year must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.switch_cost) {
            return Err(Error::InvalidParameter(format!("switch cost {} outside [0, 1)", self.switch_cost)));
        }
        if !self.risk_free_rate.is_finite() {
            return Err(Error::InvalidParameter("risk-free rate must be finite".into()));
        }
        Ok(())
    }

    fn periods(&self) -> f64 {
        f64::from(self.trading_days_per_year)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holding {
    Risk,
    Haven,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeMatch {
    pub segment: usize,
    pub cluster: usize,
    pub distance: f64,
    pub avoid: bool,
}

/// The `ceil(r / 2)` most volatile clusters, or none when there is a single
/// cluster.
pub fn avoided_clusters(model: &RegimeModel) -> Vec<usize> {
    let r = model.n_clusters();
    if r < 2 {
        return Vec::new();
    }
    model.variance_rank[..r.div_ceil(2)].to_vec()
}

/// Nearest past segment to `recent` in Wasserstein-1 distance, ties to the
/// earlier segment.
pub fn match_current_regime(model: &RegimeModel, recent: &[f64]) -> Result<RegimeMatch> {
    let avoid = avoided_clusters(model);
    match_with(model, &avoid, recent)
}

fn match_with(model: &RegimeModel, avoid: &[usize], recent: &[f64]) -> Result<RegimeMatch> {
    let current = EmpiricalDist::from_slice(recent)?;
    let (segment, distance) = model
        .segments
        .iter()
        .map(|s| wasserstein1(&current, s))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });
    let cluster = model.label(segment);
    Ok(RegimeMatch {
        segment,
        cluster,
        distance,
        avoid: avoid.contains(&cluster),
    })
}

/// Daily returns of the two assets on their common dates. Entry `t` is
/// earned over `(t-1, t]` and stamped with date `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedReturns {
    /// Date of the first common close, which has no return.
    pub base_date: NaiveDate,
    pub dates: Vec<NaiveDate>,
    pub risk_log: Vec<f64>,
    pub risk: Vec<f64>,
    pub haven: Vec<f64>,
}

impl PairedReturns {
    /// Aligns two price series by date intersection.
    pub fn from_prices(risk: &PriceSeries, haven: &PriceSeries) -> Result<Self> {
        let mut closes = Vec::new();
        let (rd, hd) = (risk.dates(), haven.dates());
        let (mut i, mut j) = (0, 0);
        while i < rd.len() && j < hd.len() {
            match rd[i].cmp(&hd[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    closes.push((rd[i], risk.closes()[i], haven.closes()[j]));
                    i += 1;
                    j += 1;
                }
            }
        }
        if closes.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: closes.len(),
            });
        }
        let pairs = closes.windows(2);
        Ok(Self {
            base_date: closes[0].0,
            dates: closes[1..].iter().map(|c| c.0).collect(),
            risk_log: pairs.clone().map(|w| (w[1].1 / w[0].1).ln()).collect(),
            risk: pairs.clone().map(|w| w[1].1 / w[0].1 - 1.0).collect(),
            haven: pairs.map(|w| w[1].2 / w[0].2 - 1.0).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    fn index_of(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }
}

type Simulation = (Vec<f64>, Vec<(Holding, RegimeMatch)>);

/// Simulates the policy for look-back `n` on days `days`, using log returns
/// strictly before each day. Returns the daily returns and the matches.
fn simulate(
    model: &RegimeModel,
    avoid: &[usize],
    data: &PairedReturns,
    days: std::ops::Range<usize>,
    n: usize,
    switch_cost: f64,
    mut previous: Option<Holding>,
) -> Result<Simulation> {
    let mut returns = Vec::with_capacity(days.len());
    let mut decisions = Vec::with_capacity(days.len());
    for t in days {
        let m = match_with(model, avoid, &data.risk_log[t - n..t])?;
        let holding = if m.avoid { Holding::Haven } else { Holding::Risk };
        let r = match holding {
            Holding::Risk => data.risk[t],
            Holding::Haven => data.haven[t],
        };
        let cost = match previous {
            Some(p) if p != holding => switch_cost,
            _ => 0.0,
        };
        returns.push((1.0 + r) * (1.0 - cost) - 1.0);
        decisions.push((holding, m));
        previous = Some(holding);
    }
    Ok((returns, decisions))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookbackCandidate {
    pub n: usize,
    pub sharpe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookbackSearch {
    pub lookback: usize,
    pub candidates: Vec<LookbackCandidate>,
}

/// Chooses the look-back with the best in-sample Sharpe ratio over
/// `training`, ties to the smaller `n`. Every candidate is scored on the same
/// days, those after the first `max n` returns. If no candidate has a defined
/// Sharpe ratio the smallest `n` is returned.
pub fn optimize_lookback(model: &RegimeModel, training: &PairedReturns, config: &StrategyConfig) -> Result<LookbackSearch> {
    config.validate()?;
    let (lo, hi) = config.lookback_grid;
    if training.len() <= hi {
        return Err(Error::InsufficientData {
            needed: hi + 1,
            got: training.len(),
        });
    }
    let avoid = avoided_clusters(model);
    let candidates = (lo..=hi)
        .into_par_iter()
        .map(|n| {
            let (returns, _) = simulate(model, &avoid, training, hi..training.len(), n, config.switch_cost, None)?;
            let sharpe = metrics(&returns, config.risk_free_rate, config.periods()).sr;
            Ok(LookbackCandidate { n, sharpe })
        })
        .collect::<Result<Vec<_>>>()?;
    let lookback = candidates
        .iter()
        .filter_map(|c| c.sharpe.map(|s| (c.n, s)))
        .fold(None::<(usize, f64)>, |best, (n, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((n, s)),
        })
        .map_or(lo, |(n, _)| n);
    Ok(LookbackSearch { lookback, candidates })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyPosition {
    /// Day whose return the holding earns.
    pub date: NaiveDate,
    pub holding: Holding,
    pub window: usize,
    pub lookback: usize,
    /// Segment and cluster indices within that window's model.
    pub matched_segment: usize,
    pub matched_cluster: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Dynamic,
    HoldRisk,
    HoldHaven,
    /// Half in each asset, rebalanced daily.
    Balanced,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::Dynamic, Self::HoldRisk, Self::HoldHaven, Self::Balanced];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dynamic => "dynamic",
            Self::HoldRisk => "hold_risk",
            Self::HoldHaven => "hold_haven",
            Self::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCurve {
    pub kind: StrategyKind,
    pub returns: Vec<f64>,
    /// Value after each trading day, from 1.0 on the base date.
    pub equity: Vec<f64>,
    pub metrics: Metrics,
}

impl StrategyCurve {
    fn new(kind: StrategyKind, returns: Vec<f64>, config: &StrategyConfig) -> Self {
        Self {
            kind,
            equity: equity_curve(&returns),
            metrics: metrics(&returns, config.risk_free_rate, config.periods()),
            returns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub index: usize,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub trade_start: NaiveDate,
    pub trade_end: NaiveDate,
    pub n_segments: usize,
    pub n_clusters: usize,
    pub avoided_clusters: Vec<usize>,
    pub lookback: LookbackSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub assets: Assets,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Last close before the first trading day; every curve is 1.0 here.
    pub base_date: NaiveDate,
    pub dates: Vec<NaiveDate>,
    pub positions: Vec<DailyPosition>,
    pub strategies: Vec<StrategyCurve>,
    pub windows: Vec<WindowSummary>,
}

impl BacktestReport {
    pub fn strategy(&self, kind: StrategyKind) -> &StrategyCurve {
        self.strategies
            .iter()
            .find(|s| s.kind == kind)
            .expect("report holds every strategy")
    }

    pub fn write_equity_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date"];
        header.extend(self.strategies.iter().map(|s| s.kind.name()));
        w.write_record(&header).map_err(csv_io)?;
        let mut row = vec![self.base_date.to_string()];
        row.extend(self.strategies.iter().map(|_| "1".to_string()));
        w.write_record(&row).map_err(csv_io)?;
        for (i, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.to_string()];
            row.extend(self.strategies.iter().map(|s| s.equity[i].to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_positions_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "holding", "window", "lookback", "matched_segment", "matched_cluster", "distance"])
            .map_err(csv_io)?;
        for p in &self.positions {
            let holding = match p.holding {
                Holding::Risk => &self.assets.risk,
                Holding::Haven => &self.assets.haven,
            };
            w.write_record([
                p.date.to_string(),
                holding.clone(),
                p.window.to_string(),
                p.lookback.to_string(),
                p.matched_segment.to_string(),
                p.matched_cluster.to_string(),
                p.distance.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_files(&self, equity: &Path, positions: &Path) -> Result<()> {
        self.write_equity_csv(std::fs::File::create(equity)?)?;
        self.write_positions_csv(std::fs::File::create(positions)?)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.into())
}

fn years_before(date: NaiveDate, years: u32) -> Result<NaiveDate> {
    date.checked_sub_months(Months::new(12 * years))
        .ok_or_else(|| Error::InvalidParameter(format!("{date} minus {years} years is out of range")))
}

fn years_after(date: NaiveDate, years: u32) -> Result<NaiveDate> {
    date.checked_add_months(Months::new(12 * years))
        .ok_or_else(|| Error::InvalidParameter(format!("{date} plus {years} years is out of range")))
}

/// Runs the walk-forward backtest over trading days in `[start, end]`.
pub fn run_backtest(
    risk_prices: &PriceSeries,
    haven_prices: &PriceSeries,
    start: NaiveDate,
    end: NaiveDate,
    table: &ThresholdTable,
    config: &StrategyConfig,
) -> Result<BacktestReport> {
    config.validate()?;
    if start > end {
        return Err(Error::InvalidParameter(format!("start {start} is after end {end}")));
    }
    let data = PairedReturns::from_prices(risk_prices, haven_prices)?;
    let years = config.train_window_years;
    let first_train = years_before(start, years)?;
    let slack = chrono::Days::new(COVERAGE_SLACK_DAYS);
    if data.base_date > first_train + slack {
        return Err(Error::Contract(format!(
            "prices common to both assets start on {}; missing {first_train} to {}",
            data.base_date,
            data.base_date.pred_opt().unwrap_or(data.base_date)
        )));
    }
    let last = *data.dates.last().expect("at least one return");
    if last + slack < end {
        return Err(Error::Contract(format!(
            "prices common to both assets end on {last}; missing {} to {end}",
            last.succ_opt().unwrap_or(last)
        )));
    }

    let mut positions = Vec::new();
    let mut dynamic = Vec::new();
    let mut windows = Vec::new();
    let first_day = data.index_of(start);
    let stop = data.dates.partition_point(|d| *d <= end);
    if first_day >= stop {
        return Err(Error::Contract(format!("no common trading days in [{start}, {end}]")));
    }
    let mut trade_start = start;
    let mut previous = None;
    while trade_start <= end {
        let next = years_after(trade_start, years)?;
        let (lo, hi) = (data.index_of(trade_start), data.index_of(next).min(stop));
        let train_lo = data.index_of(years_before(trade_start, years)?);
        let index = windows.len();
        if lo < hi {
            let train = PairedReturns {
                base_date: if train_lo == 0 { data.base_date } else { data.dates[train_lo - 1] },
                dates: data.dates[train_lo..lo].to_vec(),
                risk_log: data.risk_log[train_lo..lo].to_vec(),
                risk: data.risk[train_lo..lo].to_vec(),
                haven: data.haven[train_lo..lo].to_vec(),
            };
            let returns = ReturnSeries::new(risk_prices.ticker(), train.dates.clone(), train.risk_log.clone())?;
            let regime = RegimeConfig {
                seed: derive_seed(config.regime.seed, index as u64),
                ..config.regime.clone()
            };
            let model = fit_regimes(&returns, table, &regime)?;
            let search = optimize_lookback(&model, &train, config)?;
            let n = search.lookback;
            let avoid = avoided_clusters(&model);
            let (rets, decisions) = simulate(&model, &avoid, &data, lo..hi, n, config.switch_cost, previous)?;
            log::info!(
                "window {index}: trading {trade_start} with {} segments, {} clusters, look-back {n}",
                model.n_segments(),
                model.n_clusters()
            );
            previous = decisions.last().map(|d| d.0);
            for (t, (holding, m)) in (lo..hi).zip(decisions) {
                positions.push(DailyPosition {
                    date: data.dates[t],
                    holding,
                    window: index,
                    lookback: n,
                    matched_segment: m.segment,
                    matched_cluster: m.cluster,
                    distance: m.distance,
                });
            }
            dynamic.extend(rets);
            windows.push(WindowSummary {
                index,
                train_start: train.dates[0],
                train_end: *train.dates.last().unwrap(),
                trade_start: data.dates[lo],
                trade_end: data.dates[hi - 1],
                n_segments: model.n_segments(),
                n_clusters: model.n_clusters(),
                avoided_clusters: avoid,
                lookback: search,
            });
        }
        trade_start = next;
    }

    let days = first_day..stop;
    let risk = data.risk[days.clone()].to_vec();
    let haven = data.haven[days.clone()].to_vec();
    let balanced = risk.iter().zip(&haven).map(|(a, b)| 0.5 * (a + b)).collect();
    let strategies = vec![
        StrategyCurve::new(StrategyKind::Dynamic, dynamic, config),
        StrategyCurve::new(StrategyKind::HoldRisk, risk, config),
        StrategyCurve::new(StrategyKind::HoldHaven, haven, config),
        StrategyCurve::new(StrategyKind::Balanced, balanced, config),
    ];
    Ok(BacktestReport {
        assets: Assets {
            risk: risk_prices.ticker().to_string(),
            haven: haven_prices.ticker().to_string(),
        },
        start,
        end,
        base_date: if first_day == 0 { data.base_date } else { data.dates[first_day - 1] },
        dates: data.dates[days].to_vec(),
        positions,
        strategies,
        windows,
    })
}
