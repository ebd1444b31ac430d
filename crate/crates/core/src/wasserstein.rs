//! Exact 1-D Wasserstein-1 distances between empirical distributions.
//!
//! For two step CDFs `F` and `G` the distance is `∫ |F - G| dx`, which is
//! evaluated exactly by sweeping the merged sorted sample points: both CDFs
//! are constant between consecutive breakpoints.
//!
//! The module also carries two closed forms for zero-mean normals, used as
//! test oracles: the point where two densities cross, and the distance
//! between two normals of different scale.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Empirical distribution of one segment: its values in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDist {
    sorted_values: Vec<f64>,
    source_segment: Option<usize>,
}

impl EmpiricalDist {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("empirical distribution values must be finite".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self {
            sorted_values: values,
            source_segment: None,
        })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn with_segment(mut self, index: usize) -> Self {
        self.source_segment = Some(index);
        self
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    pub fn source_segment(&self) -> Option<usize> {
        self.source_segment
    }

    pub fn len(&self) -> usize {
        self.sorted_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_values.is_empty()
    }

    /// Right-continuous empirical CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted_values.partition_point(|v| *v <= x) as f64 / self.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.sorted_values.iter().sum::<f64>() / self.len() as f64
    }
}

/// `W_1(a, b) = ∫ |F_a - F_b| dx`, exact for empirical distributions.
pub fn wasserstein1(a: &EmpiricalDist, b: &EmpiricalDist) -> f64 {
    let (xs, ys) = (a.sorted_values(), b.sorted_values());
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = xs[0].min(ys[0]);
    let mut total = 0.0;
    loop {
        let x = match (xs.get(i), ys.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => break,
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        prev = x;
    }
    total
}

/// Symmetric matrix of pairwise Wasserstein-1 distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a matrix from row-major entries, checking symmetry, the zero
    /// diagonal and non-negativity.
    pub fn from_rows(size: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::Contract(format!(
                "{} entries for a {size}x{size} matrix",
                entries.len()
            )));
        }
        for i in 0..size {
            if entries[i * size + i] != 0.0 {
                return Err(Error::Validation(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..size {
                let v = entries[i * size + j];
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Validation(format!("entry ({i}, {j}) = {v} is not a distance")));
                }
                if v != entries[j * size + i] {
                    return Err(Error::Validation(format!("entries ({i}, {j}) and ({j}, {i}) differ")));
                }
            }
        }
        Ok(Self { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Row-major CSV with a header of segment indices.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.size).map(|i| i.to_string()).collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.size {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines();
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))??;
        let size = header.split(',').filter(|s| !s.trim().is_empty()).count();
        let mut entries = Vec::with_capacity(size * size);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = k as u64 + 2;
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(lineno, e.to_string()))?;
            if row.len() != size {
                return Err(parse_err(lineno, format!("expected {size} columns, found {}", row.len())));
            }
            entries.extend(row);
        }
        Self::from_rows(size, entries)
    }
}

/// Pairwise distances, each unordered pair evaluated once.
pub fn distance_matrix(segments: &[EmpiricalDist]) -> DistanceMatrix {
    let m = segments.len();
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| wasserstein1(&segments[i], &segments[j]))
        .collect();
    let mut entries = vec![0.0; m * m];
    for (&(i, j), d) in pairs.iter().zip(values) {
        entries[i * m + j] = d;
        entries[j * m + i] = d;
    }
    DistanceMatrix { size: m, entries }
}

/// The positive point where the densities of `N(0, sigma1²)` and
/// `N(0, sigma2²)` cross. The narrower density is larger exactly on
/// `(-tau, tau)`.
pub fn gaussian_crossing(sigma1: f64, sigma2: f64) -> Result<f64> {
    if !(sigma1 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scales must be positive and finite, got ({sigma1}, {sigma2})"
        )));
    }
    if sigma1 >= sigma2 {
        return Err(Error::Ordering(format!("need sigma1 < sigma2, got ({sigma1}, {sigma2})")));
    }
    let s1sq = sigma1 * sigma1;
    let s2sq = sigma2 * sigma2;
    let diff_sq = (sigma2 - sigma1) * (sigma2 + sigma1);
    let log_ratio = ((sigma2 - sigma1) / sigma1).ln_1p();
    Ok((2.0 * s1sq * s2sq / diff_sq * log_ratio).sqrt())
}

/// `W_1(N(0, sigma1²), N(0, sigma2²)) = (sigma2 - sigma1) √(2/π)` for `sigma1 <= sigma2`.
pub fn ordered_w1_gaussian(sigma1: f64, sigma2: f64) -> Result<f64> {
    if !(sigma1 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scales must be positive and finite, got ({sigma1}, {sigma2})"
        )));
    }
    if sigma1 > sigma2 {
        return Err(Error::Ordering(format!("need sigma1 <= sigma2, got ({sigma1}, {sigma2})")));
    }
    Ok((sigma2 - sigma1) * (2.0 / std::f64::consts::PI).sqrt())
}
