//! Piecewise-stationary test series with known regimes, clustering scores,
//! and a two-asset market with planted crash regimes.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{detect_in_values, ThresholdTable};
use crate::market_data::{PriceSeries, ReturnSeries};
use crate::regimes::fit_with_partition;
use crate::regimes::RegimeConfig;
use crate::rng::{derive_seed, stream_rng};
use crate::spectral::{ClusterMethod, SpectralOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    /// Standard deviation (normal) or scale `b` (Laplace) of each base distribution.
    pub base_scales: Vec<f64>,
    pub segments_per_series: usize,
    /// Inclusive bounds on segment length.
    pub length_range: (usize, usize),
    /// Standard deviation of the per-segment location shift.
    pub noise_sd_location: f64,
    /// Standard deviation of the per-segment scale jitter, as a fraction of the base scale.
    pub noise_sd_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family,
            base_scales: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            segments_per_series: 8,
            length_range: (200, 300),
            noise_sd_location: 0.01,
            noise_sd_scale: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_scales.len() < 2 || self.base_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("need at least two positive base scales".into()));
        }
        if self.segments_per_series == 0 {
            return Err(Error::InvalidParameter("segments_per_series must be positive".into()));
        }
        let (lo, hi) = self.length_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidParameter(format!("bad length range [{lo}, {hi}]")));
        }
        if !(self.noise_sd_location >= 0.0) || !(self.noise_sd_scale >= 0.0) {
            return Err(Error::InvalidParameter("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// A generated series with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSeries {
    pub values: Vec<f64>,
    /// Index of the first observation of every segment after the first.
    pub change_points: Vec<usize>,
    /// Base distribution index of each segment.
    pub labels: Vec<usize>,
    /// Realized location and scale of each segment.
    pub locations: Vec<f64>,
    pub scales: Vec<f64>,
}

fn laplace(rng: &mut ChaCha8Rng, location: f64, scale: f64) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        if u.abs() < 0.5 {
            return location - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

pub fn generate_series(spec: &SyntheticSpec, trial_seed: u64) -> Result<SyntheticSeries> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, trial_seed);
    let n_bases = spec.base_scales.len();
    let (lo, hi) = spec.length_range;
    let mut out = SyntheticSeries {
        values: Vec::new(),
        change_points: Vec::new(),
        labels: Vec::new(),
        locations: Vec::new(),
        scales: Vec::new(),
    };
    for s in 0..spec.segments_per_series {
        let base = match out.labels.last() {
            None => rng.random_range(0..n_bases),
            Some(&prev) => {
                let b = rng.random_range(0..n_bases - 1);
                if b >= prev {
                    b + 1
                } else {
                    b
                }
            }
        };
        let len = rng.random_range(lo..=hi);
        let location = spec.noise_sd_location * rng.sample::<f64, _>(StandardNormal);
        let base_scale = spec.base_scales[base];
        let scale = loop {
            let eps = spec.noise_sd_scale * base_scale * rng.sample::<f64, _>(StandardNormal);
            if base_scale + eps > 0.0 {
                break base_scale + eps;
            }
        };
        if s > 0 {
            out.change_points.push(out.values.len());
        }
        match spec.family {
            Family::Normal => {
                let d = Normal::new(location, scale).expect("positive scale");
                out.values.extend((0..len).map(|_| d.sample(&mut rng)));
            }
            Family::Laplace => out.values.extend((0..len).map(|_| laplace(&mut rng, location, scale))),
        }
        out.labels.push(base);
        out.locations.push(location);
        out.scales.push(scale);
    }
    Ok(out)
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Fowlkes-Mallows index between two labelings of the same items.
pub fn fmi(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "{} true labels against {} predicted",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::Contract("FMI needs at least two items".into()));
    }
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(predicted) {
        *joint.entry((t, p)).or_default() += 1;
        *rows.entry(t).or_default() += 1;
        *cols.entry(p).or_default() += 1;
    }
    let tp: u64 = joint.values().map(|&n| pairs(n)).sum();
    let true_pairs: u64 = rows.values().map(|&n| pairs(n)).sum();
    let pred_pairs: u64 = cols.values().map(|&n| pairs(n)).sum();
    if true_pairs == 0 || pred_pairs == 0 {
        return Ok(0.0);
    }
    Ok((tp as f64 / pred_pairs as f64 * (tp as f64 / true_pairs as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub true_segments: usize,
    pub detected_segments: usize,
    pub matched: bool,
    pub fmi_eigengap: Option<f64>,
    pub fmi_zp: Option<f64>,
    pub k_eigengap: Option<usize>,
    pub k_zp: Option<usize>,
    pub true_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub spec: SyntheticSpec,
    pub n_trials: usize,
    pub mismatch_count: usize,
    pub mismatch_rate: f64,
    /// `None` when no trial matched.
    pub mean_fmi_eigengap: Option<f64>,
    pub mean_fmi_zp: Option<f64>,
    pub trials: Vec<TrialOutcome>,
}

pub fn run_trial(spec: &SyntheticSpec, trial: usize, table: &ThresholdTable, spectral: &SpectralOptions) -> Result<TrialOutcome> {
    let series = generate_series(spec, trial as u64)?;
    let partition = detect_in_values(&series.values, table)?;
    let true_segments = series.labels.len();
    let detected_segments = partition.n_segments();
    let true_clusters = {
        let mut l = series.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    let mut outcome = TrialOutcome {
        trial,
        true_segments,
        detected_segments,
        matched: detected_segments == true_segments,
        fmi_eigengap: None,
        fmi_zp: None,
        k_eigengap: None,
        k_zp: None,
        true_clusters,
    };
    if !outcome.matched {
        log::debug!("trial {trial}: {detected_segments} segments detected, {true_segments} true");
        return Ok(outcome);
    }
    let returns = ReturnSeries::from_values("synthetic", series.values);
    let seed = derive_seed(spec.seed ^ 0x5eed_c1a5, trial as u64);
    for method in [ClusterMethod::Eigengap, ClusterMethod::Zp] {
        let config = RegimeConfig {
            method,
            seed,
            spectral: spectral.clone(),
        };
        let model = fit_with_partition(&returns, partition.clone(), &config)?;
        let score = fmi(&series.labels, &model.assignment.labels)?;
        match method {
            ClusterMethod::Eigengap => {
                outcome.fmi_eigengap = Some(score);
                outcome.k_eigengap = Some(model.n_clusters());
            }
            _ => {
                outcome.fmi_zp = Some(score);
                outcome.k_zp = Some(model.n_clusters());
            }
        }
    }
    Ok(outcome)
}

pub fn run_experiment(spec: &SyntheticSpec, n_trials: usize, table: &ThresholdTable, spectral: &SpectralOptions) -> Result<ExperimentSummary> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be at least 1".into()));
    }
    spec.validate()?;
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|t| run_trial(spec, t, table, spectral))
        .collect::<Result<Vec<_>>>()?;
    let mismatch_count = trials.iter().filter(|t| !t.matched).count();
    let mean = |f: fn(&TrialOutcome) -> Option<f64>| {
        let xs: Vec<f64> = trials.iter().filter_map(f).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    Ok(ExperimentSummary {
        spec: spec.clone(),
        n_trials,
        mismatch_count,
        mismatch_rate: mismatch_count as f64 / n_trials as f64,
        mean_fmi_eigengap: mean(|t| t.fmi_eigengap),
        mean_fmi_zp: mean(|t| t.fmi_zp),
        trials,
    })
}

/// Counts of matched-trial FMI scores in equal-width bins over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmiHistogram {
    pub edges: Vec<f64>,
    pub eigengap: Vec<usize>,
    pub zp: Vec<usize>,
}

pub fn fmi_histogram(summary: &ExperimentSummary, bins: usize) -> FmiHistogram {
    let bins = bins.max(1);
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let count = |f: fn(&TrialOutcome) -> Option<f64>| {
        let mut h = vec![0; bins];
        for v in summary.trials.iter().filter_map(f) {
            h[((v * bins as f64) as usize).min(bins - 1)] += 1;
        }
        h
    };
    FmiHistogram {
        edges,
        eigengap: count(|t| t.fmi_eigengap),
        zp: count(|t| t.fmi_zp),
    }
}

/// Two synthetic assets on weekday dates: a risk asset alternating between
/// calm growth and turbulent, falling regimes, and a quiet haven.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoAssetSpec {
    pub start: NaiveDate,
    pub days: usize,
    pub calm_drift: f64,
    pub calm_sd: f64,
    pub calm_length: (usize, usize),
    pub turbulent_drift: f64,
    pub turbulent_sd: f64,
    pub turbulent_length: (usize, usize),
    pub haven_drift: f64,
    pub haven_sd: f64,
}

impl Default for TwoAssetSpec {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
            days: 252 * 12,
            calm_drift: 0.0006,
            calm_sd: 0.008,
            calm_length: (100, 250),
            turbulent_drift: -0.002,
            turbulent_sd: 0.03,
            turbulent_length: (40, 100),
            haven_drift: 0.0002,
            haven_sd: 0.006,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoAssetWorld {
    pub risk: PriceSeries,
    pub haven: PriceSeries,
    /// Whether each return day of the risk asset (from the second date on) is turbulent.
    pub turbulent: Vec<bool>,
}

fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

pub fn generate_two_asset_world(spec: &TwoAssetSpec, seed: u64) -> Result<TwoAssetWorld> {
    if spec.days < 2 || spec.calm_length.0 == 0 || spec.turbulent_length.0 == 0 {
        return Err(Error::InvalidParameter("world needs at least two days and positive regime lengths".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mut turbulent = Vec::with_capacity(spec.days);
    let mut calm = true;
    while turbulent.len() < spec.days - 1 {
        let (lo, hi) = if calm { spec.calm_length } else { spec.turbulent_length };
        let len = rng.random_range(lo..=hi.max(lo));
        turbulent.extend(std::iter::repeat_n(!calm, len));
        calm = !calm;
    }
    turbulent.truncate(spec.days - 1);
    let dates = weekdays(spec.start, spec.days);
    let mut risk = vec![(dates[0], 100.0)];
    let mut haven = vec![(dates[0], 100.0)];
    for (i, &t) in turbulent.iter().enumerate() {
        let (mu, sd) = if t {
            (spec.turbulent_drift, spec.turbulent_sd)
        } else {
            (spec.calm_drift, spec.calm_sd)
        };
        let r = mu + sd * rng.sample::<f64, _>(StandardNormal);
        let h = spec.haven_drift + spec.haven_sd * rng.sample::<f64, _>(StandardNormal);
        risk.push((dates[i + 1], risk[i].1 * r.exp()));
        haven.push((dates[i + 1], haven[i].1 * h.exp()));
    }
    Ok(TwoAssetWorld {
        risk: PriceSeries::new("RISK", risk)?,
        haven: PriceSeries::new("HAVEN", haven)?,
        turbulent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct count over all unordered pairs.
    fn fmi_pairs(a: &[usize], b: &[usize]) -> f64 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
        }
        if tp + fp == 0 || tp + fn_ == 0 {
            return 0.0;
        }
        ((tp as f64 / (tp + fp) as f64) * (tp as f64 / (tp + fn_) as f64)).sqrt()
    }

    #[test]
    fn fmi_examples() {
        assert_eq!(fmi(&[0, 0, 1, 2, 2], &[4, 4, 0, 7, 7]).unwrap(), 1.0);
        assert!((fmi(&[0, 0, 1], &[5, 5, 5]).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(fmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!(fmi(&[0, 1], &[0]).is_err());
        assert!(fmi(&[0], &[0]).is_err());
    }

    #[test]
    fn two_segment_spec_has_one_boundary() {
        let spec = SyntheticSpec {
            base_scales: vec![1.0, 4.0],
            segments_per_series: 2,
            ..SyntheticSpec::new(Family::Normal, 3)
        };
        let s = generate_series(&spec, 0).unwrap();
        assert_eq!(s.change_points.len(), 1);
        assert!((200..=300).contains(&s.change_points[0]));
        assert_ne!(s.labels[0], s.labels[1]);
    }

    #[test]
    fn eight_segments_length_bounds_and_determinism() {
        for family in [Family::Normal, Family::Laplace] {
            let spec = SyntheticSpec::new(family, 11);
            for t in 0..20 {
                let s = generate_series(&spec, t).unwrap();
                assert!((1600..=2400).contains(&s.values.len()));
                assert_eq!(s.labels.len(), 8);
                assert!(s.labels.windows(2).all(|w| w[0] != w[1]));
                assert!(s.scales.iter().all(|v| *v > 0.0));
                assert_eq!(s, generate_series(&spec, t).unwrap());
            }
        }
    }

    #[test]
    fn laplace_sampler_has_expected_spread() {
        let mut rng = stream_rng(1, 1);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| laplace(&mut rng, 0.5, 2.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.03);
        assert!((var / 8.0 - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn easy_instance_is_matched_and_perfect() {
        // two far-apart bases, so segments alternate between them
        let spec = SyntheticSpec {
            base_scales: vec![0.25, 4.0],
            ..SyntheticSpec::new(Family::Normal, 5)
        };
        let s = run_experiment(&spec, 4, &ThresholdTable::bundled_default(), &SpectralOptions::default()).unwrap();
        assert!(s.mismatch_count < 4);
        for t in s.trials.iter().filter(|t| t.matched) {
            assert_eq!(t.fmi_eigengap, Some(1.0), "trial {}", t.trial);
            assert_eq!(t.fmi_zp, Some(1.0), "trial {}", t.trial);
        }
    }

    #[test]
    fn histogram_counts_matched_trials() {
        let spec = SyntheticSpec::new(Family::Normal, 2);
        let s = run_experiment(&spec, 4, &ThresholdTable::bundled_default(), &SpectralOptions::default()).unwrap();
        let h = fmi_histogram(&s, 10);
        let matched = s.trials.iter().filter(|t| t.matched).count();
        assert_eq!(h.eigengap.iter().sum::<usize>(), matched);
        assert_eq!(h.zp.iter().sum::<usize>(), matched);
        for t in &s.trials {
            assert_eq!(t.matched, t.fmi_eigengap.is_some());
            assert_eq!(t.matched, t.fmi_zp.is_some());
        }
    }

    #[test]
    fn world_has_planted_turbulence() {
        let w = generate_two_asset_world(&TwoAssetSpec::default(), 4).unwrap();
        assert_eq!(w.risk.len(), 252 * 12);
        assert_eq!(w.risk.dates(), w.haven.dates());
        assert!(w.turbulent.iter().any(|t| *t) && w.turbulent.iter().any(|t| !*t));
        assert!(w.risk.dates().iter().all(|d| d.weekday() != Weekday::Sat && d.weekday() != Weekday::Sun));
    }

    proptest! {
        #[test]
        fn fmi_matches_pair_count(
            a in prop::collection::vec(0usize..4, 2..12),
            seed in any::<u64>()
        ) {
            let mut s = seed;
            let b: Vec<usize> = a.iter().map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); (s >> 60) as usize % 4 }).collect();
            let got = fmi(&a, &b).unwrap();
            prop_assert!((got - fmi_pairs(&a, &b)).abs() < 1e-15);
            prop_assert_eq!(got, fmi(&b, &a).unwrap());
            let self_score = fmi(&a, &a).unwrap();
            let all_distinct = { let mut x = a.clone(); x.sort_unstable(); x.dedup(); x.len() == a.len() };
            prop_assert_eq!(self_score, if all_distinct { 0.0 } else { 1.0 });
        }
    }
}
