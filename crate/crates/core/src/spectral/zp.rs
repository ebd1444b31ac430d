//! Cluster-count selection by rotating eigenvectors toward the canonical axes.
//!
//! For each candidate `c` the top `c` eigenvectors of the normalized affinity
//! are rotated by a product of Givens rotations so that every row has as few
//! large entries as possible. The rotated matrix for `c` seeds the search for
//! `c + 1`, with the next eigenvector appended.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZpOptions {
    /// Gradient step on each angle.
    pub step: f64,
    pub max_iter: usize,
    /// Stop once the cost improves by less than this over two sweeps.
    pub tolerance: f64,
    /// Costs within this margin of the best count as ties; ties pick the larger `c`.
    pub tie_margin: f64,
}

impl Default for ZpOptions {
    fn default() -> Self {
        Self {
            step: 1.0,
            max_iter: 200,
            tolerance: 1e-4,
            tie_margin: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZpCandidate {
    pub c: usize,
    /// `(J / m - 1) / c`, zero when every row lies on a single axis.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZpSelection {
    pub k: usize,
    pub candidates: Vec<ZpCandidate>,
}

impl ZpSelection {
    /// True when some candidate stopped at the iteration cap.
    pub fn hit_iteration_cap(&self) -> bool {
        self.candidates.iter().any(|c| !c.converged)
    }
}

/// Alignment cost `sum_i sum_j Z_ij^2 / max_j Z_ij^2`. A zero row counts as
/// fully misaligned.
pub fn alignment_cost(z: &DMatrix<f64>) -> f64 {
    let c = z.ncols() as f64;
    z.row_iter()
        .map(|row| {
            let max = row.iter().fold(0.0f64, |m, v| m.max(v * v));
            if max == 0.0 {
                c
            } else {
                row.iter().map(|v| v * v).sum::<f64>() / max
            }
        })
        .sum()
}

fn normalized_cost(z: &DMatrix<f64>) -> f64 {
    let (m, c) = (z.nrows() as f64, z.ncols() as f64);
    (alignment_cost(z) / m - 1.0) / c
}

struct Rotation {
    pairs: Vec<(usize, usize)>,
    dim: usize,
}

impl Rotation {
    fn new(dim: usize) -> Self {
        let mut pairs = Vec::new();
        for i in 0..dim {
            for j in i + 1..dim {
                pairs.push((i, j));
            }
        }
        Self { pairs, dim }
    }

    /// Right-multiplies `u` by the Givens rotations `range` in order.
    fn apply(&self, u: &mut DMatrix<f64>, theta: &[f64], range: std::ops::Range<usize>) {
        for k in range {
            let (i, j) = self.pairs[k];
            let (s, c) = theta[k].sin_cos();
            for r in 0..u.nrows() {
                let (a, b) = (u[(r, i)], u[(r, j)]);
                u[(r, i)] = c * a + s * b;
                u[(r, j)] = -s * a + c * b;
            }
        }
    }

    fn rotate(&self, x: &DMatrix<f64>, theta: &[f64]) -> DMatrix<f64> {
        let mut u = DMatrix::identity(self.dim, self.dim);
        self.apply(&mut u, theta, 0..self.pairs.len());
        x * u
    }

    /// Derivative of `X R(theta)` with respect to angle `k`.
    fn derivative(&self, x: &DMatrix<f64>, theta: &[f64], k: usize) -> DMatrix<f64> {
        let mut u = DMatrix::identity(self.dim, self.dim);
        self.apply(&mut u, theta, 0..k);
        let (i, j) = self.pairs[k];
        let (s, c) = theta[k].sin_cos();
        let mut d = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            let (a, b) = (u[(r, i)], u[(r, j)]);
            d[(r, i)] = -s * a + c * b;
            d[(r, j)] = -c * a - s * b;
        }
        self.apply(&mut d, theta, k + 1..self.pairs.len());
        x * d
    }
}

fn cost_gradient(z: &DMatrix<f64>, dz: &DMatrix<f64>) -> f64 {
    let (m, c) = (z.nrows(), z.ncols());
    let mut grad = 0.0;
    for i in 0..m {
        let (mut jmax, mut max) = (0, 0.0);
        for j in 0..c {
            let v = z[(i, j)] * z[(i, j)];
            if v > max {
                max = v;
                jmax = j;
            }
        }
        if max == 0.0 {
            continue;
        }
        let pivot = z[(i, jmax)] * dz[(i, jmax)];
        for j in 0..c {
            let zij = z[(i, j)];
            grad += 2.0 * zij * dz[(i, j)] / max - 2.0 * zij * zij * pivot / (max * max);
        }
    }
    grad / (m as f64 * c as f64)
}

/// Minimizes the normalized alignment cost of `x` over rotations.
/// Returns the rotated matrix, its cost, the sweeps used and whether the
/// tolerance was met.
pub fn align(x: &DMatrix<f64>, options: &ZpOptions) -> (DMatrix<f64>, f64, usize, bool) {
    let rot = Rotation::new(x.ncols());
    let mut theta = vec![0.0; rot.pairs.len()];
    let mut cost = normalized_cost(x);
    let (mut prev1, mut prev2) = (cost, cost);
    let mut converged = false;
    let mut sweeps = 0;
    for iter in 1..=options.max_iter {
        sweeps = iter;
        for k in 0..theta.len() {
            let z = rot.rotate(x, &theta);
            let grad = cost_gradient(&z, &rot.derivative(x, &theta, k));
            let old = theta[k];
            theta[k] = old - options.step * grad;
            let trial = normalized_cost(&rot.rotate(x, &theta));
            if trial < cost {
                cost = trial;
            } else {
                theta[k] = old;
            }
        }
        if iter > 2 && prev2 - cost < options.tolerance {
            converged = true;
            break;
        }
        prev2 = prev1;
        prev1 = cost;
    }
    if theta.is_empty() {
        converged = true;
    }
    (rot.rotate(x, &theta), cost, sweeps, converged)
}

/// Picks `k` among `2..=k_max` from eigenvectors ordered by decreasing
/// eigenvalue of the normalized affinity (columns of `vectors`).
pub fn select_from_vectors(vectors: &DMatrix<f64>, k_max: usize, options: &ZpOptions) -> ZpSelection {
    let m = vectors.nrows();
    let hi = k_max.max(2).min(m).min(vectors.ncols());
    if hi < 2 {
        return ZpSelection {
            k: 1,
            candidates: Vec::new(),
        };
    }
    let mut candidates = Vec::new();
    let mut current = vectors.columns(0, 2).into_owned();
    for c in 2..=hi {
        if c > 2 {
            current = current.insert_column(c - 1, 0.0);
            current.set_column(c - 1, &vectors.column(c - 1));
        }
        let (rotated, cost, iterations, converged) = align(&current, options);
        log::debug!("zp c={c} cost={cost:.6} sweeps={iterations}");
        candidates.push(ZpCandidate {
            c,
            cost,
            iterations,
            converged,
        });
        current = rotated;
    }
    let best = candidates.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
    let k = candidates
        .iter()
        .filter(|c| c.cost <= best + options.tie_margin)
        .map(|c| c.c)
        .max()
        .unwrap_or(2);
    ZpSelection { k, candidates }
}
