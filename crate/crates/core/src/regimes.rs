//! End-to-end regime model: change points, segment distributions, pairwise
//! distances and clusters, with each cluster characterized by its variance.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::changepoint::{detect_changepoints, SegmentPartition, ThresholdTable};
use crate::market_data::ReturnSeries;
use crate::spectral::{spectral_cluster_with, ClusterAssignment, ClusterMethod, SpectralOptions};
use crate::wasserstein::{distance_matrix, DistanceMatrix, EmpiricalDist};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub method: ClusterMethod,
    pub seed: u64,
    pub spectral: SpectralOptions,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Eigengap,
            seed: 0,
            spectral: SpectralOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeModel {
    pub ticker: String,
    /// First and last return date of each segment.
    pub segment_dates: Vec<(NaiveDate, NaiveDate)>,
    pub partition: SegmentPartition,
    pub segments: Vec<EmpiricalDist>,
    pub segment_variances: Vec<f64>,
    pub distances: DistanceMatrix,
    pub assignment: ClusterAssignment,
    /// Pooled sample variance of the member segments of each cluster.
    pub cluster_variances: Vec<f64>,
    /// Cluster indices from most to least volatile.
    pub variance_rank: Vec<usize>,
}

impl RegimeModel {
    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.assignment.k
    }

    pub fn label(&self, segment: usize) -> usize {
        self.assignment.labels[segment]
    }

    /// Position of `cluster` in the variance ranking, 0 being the most volatile.
    pub fn volatility_position(&self, cluster: usize) -> usize {
        self.variance_rank
            .iter()
            .position(|&c| c == cluster)
            .expect("ranking covers every cluster")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.partition.n_segments();
        if self.segments.len() != n
            || self.distances.size() != n
            || self.assignment.labels.len() != n
            || self.segment_dates.len() != n
        {
            return Err(Error::Contract("segment counts disagree across the model".into()));
        }
        let mut rank = self.variance_rank.clone();
        rank.sort_unstable();
        if rank != (0..self.assignment.k).collect::<Vec<_>>() {
            return Err(Error::Contract("variance ranking is not a permutation of the clusters".into()));
        }
        if self.cluster_variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Contract("negative cluster variance".into()));
        }
        self.assignment.validate()
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Fits the model with a precomputed partition.
pub fn fit_with_partition(returns: &ReturnSeries, partition: SegmentPartition, config: &RegimeConfig) -> Result<RegimeModel> {
    if partition.len != returns.len() {
        return Err(Error::Contract(format!(
            "partition covers {} observations, series has {}",
            partition.len,
            returns.len()
        )));
    }
    let values = returns.values();
    let dates = returns.dates();
    let ranges = partition.segments();
    let segments = ranges
        .iter()
        .enumerate()
        .map(|(i, r)| EmpiricalDist::from_slice(&values[r.clone()]).map(|d| d.with_segment(i)))
        .collect::<Result<Vec<_>>>()?;
    let segment_variances: Vec<f64> = ranges.iter().map(|r| sample_variance(&values[r.clone()])).collect();
    let segment_dates = ranges.iter().map(|r| (dates[r.start], dates[r.end - 1])).collect();
    let distances = distance_matrix(&segments);
    let assignment = spectral_cluster_with(&distances, config.method, config.seed, &config.spectral)?;

    let k = assignment.k;
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for ((r, v), &l) in ranges.iter().zip(&segment_variances).zip(&assignment.labels) {
        let dof = r.len() as f64 - 1.0;
        num[l] += dof * v;
        den[l] += dof;
    }
    let cluster_variances: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 })
        .collect();
    let mut variance_rank: Vec<usize> = (0..k).collect();
    variance_rank.sort_by(|&a, &b| cluster_variances[b].total_cmp(&cluster_variances[a]).then(a.cmp(&b)));

    let model = RegimeModel {
        ticker: returns.ticker().to_string(),
        segment_dates,
        partition,
        segments,
        segment_variances,
        distances,
        assignment,
        cluster_variances,
        variance_rank,
    };
    model.validate()?;
    Ok(model)
}

/// Runs the full pipeline. A series too short to test for a change (but at
/// least one minimum segment long) is treated as a single segment.
pub fn fit_regimes(returns: &ReturnSeries, table: &ThresholdTable, config: &RegimeConfig) -> Result<RegimeModel> {
    let min_segment = table.min_segment();
    let partition = if returns.len() >= 2 * min_segment {
        detect_changepoints(returns, table)?
    } else if returns.len() >= min_segment.max(2) {
        SegmentPartition::whole(returns.len(), min_segment)
    } else {
        return Err(Error::InsufficientData {
            needed: min_segment.max(2),
            got: returns.len(),
        });
    };
    log::debug!("{}: {} segments", returns.ticker(), partition.n_segments());
    fit_with_partition(returns, partition, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub label: usize,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub ticker: String,
    pub n_observations: usize,
    pub n_segments: usize,
    pub n_clusters: usize,
    pub method: ClusterMethod,
    /// Segments per cluster, clusters in order of first appearance.
    pub cluster_sizes: Vec<usize>,
    pub cluster_variances: Vec<f64>,
    pub variance_rank: Vec<usize>,
    pub change_points: Vec<usize>,
    pub segments: Vec<SegmentSummary>,
}

pub fn regime_report(model: &RegimeModel) -> RegimeReport {
    let mut cluster_sizes = vec![0; model.n_clusters()];
    for &l in &model.assignment.labels {
        cluster_sizes[l] += 1;
    }
    let segments = model
        .partition
        .segments()
        .into_iter()
        .enumerate()
        .map(|(i, r)| SegmentSummary {
            index: i,
            start: r.start,
            end: r.end,
            start_date: model.segment_dates[i].0,
            end_date: model.segment_dates[i].1,
            label: model.label(i),
            variance: model.segment_variances[i],
        })
        .collect();
    RegimeReport {
        ticker: model.ticker.clone(),
        n_observations: model.partition.len,
        n_segments: model.n_segments(),
        n_clusters: model.n_clusters(),
        method: model.assignment.method,
        cluster_sizes,
        cluster_variances: model.cluster_variances.clone(),
        variance_rank: model.variance_rank.clone(),
        change_points: model.partition.change_points.clone(),
        segments,
    }
}

/// Gaussian kernel density of one segment on the shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub segment: usize,
    pub label: usize,
    pub bandwidth: f64,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPlot {
    pub grid: Vec<f64>,
    pub curves: Vec<DensityCurve>,
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)` on sorted data.
pub fn silverman_bandwidth(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n < 2 {
        return 1e-3;
    }
    let sd = sample_variance(sorted).sqrt();
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3
    }
}

/// Per-segment density estimates for plotting, on `points` grid values
/// spanning every segment plus three bandwidths either side.
pub fn segment_densities(model: &RegimeModel, points: usize) -> DensityPlot {
    let points = points.max(2);
    let bandwidths: Vec<f64> = model.segments.iter().map(|s| silverman_bandwidth(s.sorted_values())).collect();
    let pad = 3.0 * bandwidths.iter().copied().fold(0.0, f64::max);
    let lo = model.segments.iter().map(|s| s.sorted_values()[0]).fold(f64::INFINITY, f64::min) - pad;
    let hi = model
        .segments
        .iter()
        .map(|s| s.sorted_values()[s.len() - 1])
        .fold(f64::NEG_INFINITY, f64::max)
        + pad;
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let curves = model
        .segments
        .iter()
        .zip(&bandwidths)
        .enumerate()
        .map(|(i, (seg, &h))| {
            let n = seg.len() as f64;
            let density = grid
                .iter()
                .map(|x| {
                    seg.sorted_values()
                        .iter()
                        .map(|v| {
                            let z = (x - v) / h;
                            (-0.5 * z * z).exp()
                        })
                        .sum::<f64>()
                        * norm
                        / (n * h)
                })
                .collect();
            DensityCurve {
                segment: i,
                label: model.label(i),
                bandwidth: h,
                density,
            }
        })
        .collect();
    DensityPlot { grid, curves }
}
