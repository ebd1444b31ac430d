//! Ranks and the Mood dispersion statistic.
//!
//! Ranks use the counting definition `rank(r) = #{s : r >= s}`, so tied
//! observations all receive the largest rank of their tie group.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Standardized Mood statistic for one split of a pooled sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoodResult {
    /// `|M' - mean| / sd`, always non-negative.
    pub statistic: f64,
    /// Size of the left sample.
    pub split_index: usize,
}

/// Counting ranks of every element of `pooled`.
pub fn ranks(pooled: &[f64]) -> Vec<usize> {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    pooled
        .iter()
        .map(|r| sorted.partition_point(|s| s <= r))
        .collect()
}

/// Null mean and variance of `M'` for a left sample of size `m` and a right sample of size `n`.
pub fn mood_moments(m: usize, n: usize) -> (f64, f64) {
    let (m, n) = (m as f64, n as f64);
    let big_n = m + n;
    let mean = m * (big_n * big_n - 1.0) / 12.0;
    let var = m * n * (big_n + 1.0) * (big_n * big_n - 4.0) / 180.0;
    (mean, var)
}

/// Mood test of `left` against `right`.
///
/// A pooled sample whose values are all equal carries no dispersion
/// information and yields a statistic of exactly zero.
pub fn mood_statistic(left: &[f64], right: &[f64]) -> Result<MoodResult> {
    let (m, n) = (left.len(), right.len());
    if m == 0 || n == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            got: m.min(n),
        });
    }
    let big_n = m + n;
    if big_n < 4 {
        return Err(Error::DegenerateSample(big_n));
    }
    let pooled: Vec<f64> = left.iter().chain(right).copied().collect();
    let first = pooled[0];
    if pooled.iter().all(|v| *v == first) {
        return Ok(MoodResult {
            statistic: 0.0,
            split_index: m,
        });
    }
    let r = ranks(&pooled);
    let centre = (big_n as f64 + 1.0) / 2.0;
    let m_prime: f64 = r[..m].iter().map(|&k| (k as f64 - centre).powi(2)).sum();
    let (mean, var) = mood_moments(m, n);
    Ok(MoodResult {
        statistic: (m_prime - mean).abs() / var.sqrt(),
        split_index: m,
    })
}

/// Largest split statistic observed after a push.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMax {
    pub statistic: f64,
    /// Size of the left sample at the maximizing split.
    pub split: usize,
}

/// Incremental max-over-splits Mood statistic for a growing sample.
///
/// Each push updates all ranks in `O(N)` and scans the admissible splits
/// `min_segment <= m <= N - min_segment` in `O(N)`.
#[derive(Debug, Clone)]
pub struct MoodStream {
    min_segment: usize,
    values: Vec<f64>,
    ranks: Vec<u32>,
    lo: f64,
    hi: f64,
    inv_sqrt: Vec<f64>,
}

impl MoodStream {
    pub fn new(min_segment: usize) -> Self {
        Self::with_capacity(min_segment, 0)
    }

    pub fn with_capacity(min_segment: usize, capacity: usize) -> Self {
        assert!(min_segment >= 1, "min_segment must be at least 1");
        Self {
            min_segment,
            values: Vec::with_capacity(capacity),
            ranks: Vec::with_capacity(capacity),
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            inv_sqrt: vec![0.0],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min_segment(&self) -> usize {
        self.min_segment
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.ranks.clear();
        self.lo = f64::INFINITY;
        self.hi = f64::NEG_INFINITY;
    }

    /// Appends `x`; returns the best split once at least `2 * min_segment`
    /// values have been seen.
    pub fn push(&mut self, x: f64) -> Option<SplitMax> {
        let mut below_or_equal = 0u32;
        for (v, r) in self.values.iter().zip(self.ranks.iter_mut()) {
            *r += u32::from(*v >= x);
            below_or_equal += u32::from(*v <= x);
        }
        self.values.push(x);
        self.ranks.push(below_or_equal + 1);
        self.lo = self.lo.min(x);
        self.hi = self.hi.max(x);

        let big_n = self.values.len();
        while self.inv_sqrt.len() <= big_n {
            let k = self.inv_sqrt.len() as f64;
            self.inv_sqrt.push(1.0 / k.sqrt());
        }
        if big_n < 2 * self.min_segment {
            return None;
        }
        if self.lo == self.hi {
            return Some(SplitMax {
                statistic: 0.0,
                split: self.min_segment,
            });
        }

        let nf = big_n as f64;
        let centre = (nf + 1.0) / 2.0;
        let mean_per_left = (nf * nf - 1.0) / 12.0;
        let sd_scale = 1.0 / ((nf + 1.0) * (nf * nf - 4.0) / 180.0).sqrt();

        let min_seg = self.min_segment;
        let last = big_n - min_seg;
        let sq = |r: &u32| {
            let d = *r as f64 - centre;
            d * d
        };
        // M'_m for the smallest admissible m, then one rank at a time
        let mut prefix: f64 = self.ranks[..min_seg - 1].iter().map(sq).sum();
        let mut best = f64::NEG_INFINITY;
        let mut best_m = min_seg;
        let ranks = &self.ranks[min_seg - 1..last];
        let scales = &self.inv_sqrt[min_seg..=last];
        for (k, (r, left_scale)) in ranks.iter().zip(scales).enumerate() {
            prefix += sq(r);
            let m = min_seg + k;
            // inv_sqrt[big_n - m] lives at scales[last - m]
            let right_scale = scales[last - m];
            let z = (prefix - m as f64 * mean_per_left).abs() * left_scale * right_scale;
            if z > best {
                best = z;
                best_m = m;
            }
        }
        Some(SplitMax {
            statistic: best * sd_scale,
            split: best_m,
        })
    }

    /// Best split with at least `min_segment` values on the left and at least
    /// one on the right. Used to place a change once one has been declared.
    pub fn locate(&self) -> Option<SplitMax> {
        let big_n = self.values.len();
        if big_n < self.min_segment + 1 || big_n < 4 {
            return None;
        }
        if self.lo == self.hi {
            return Some(SplitMax {
                statistic: 0.0,
                split: self.min_segment,
            });
        }
        let nf = big_n as f64;
        let centre = (nf + 1.0) / 2.0;
        let mean_per_left = (nf * nf - 1.0) / 12.0;
        let sd_scale = 1.0 / ((nf + 1.0) * (nf * nf - 4.0) / 180.0).sqrt();
        let mut prefix = 0.0;
        let mut best = SplitMax {
            statistic: f64::NEG_INFINITY,
            split: self.min_segment,
        };
        for (i, &r) in self.ranks[..big_n - 1].iter().enumerate() {
            let d = r as f64 - centre;
            prefix += d * d;
            let m = i + 1;
            if m < self.min_segment {
                continue;
            }
            let z = (prefix - m as f64 * mean_per_left).abs() * sd_scale / ((m * (big_n - m)) as f64).sqrt();
            if z > best.statistic {
                best = SplitMax { statistic: z, split: m };
            }
        }
        Some(best)
    }
}
