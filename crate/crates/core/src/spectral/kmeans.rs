//! Lloyd's k-means with k-means++ seeding and deterministic restarts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// Cluster of each point, relabelled in order of first appearance.
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `points` (all of the same dimension) into exactly `k` non-empty
/// clusters. Requires `1 <= k <= points.len()`.
pub fn kmeans(points: &[Vec<f64>], k: usize, options: KMeansOptions, seed: u64) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= number of points");
    let runs: Vec<(Vec<usize>, f64)> = (0..options.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            lloyd(points, k, options.max_iter, &mut rng)
        })
        .collect();
    // lowest inertia wins, earliest restart on ties
    let (restart, (labels, inertia)) = runs
        .into_iter()
        .enumerate()
        .fold(None::<(usize, (Vec<usize>, f64))>, |best, (r, run)| match best {
            Some((_, (_, b))) if b <= run.1 => best,
            _ => Some((r, run)),
        })
        .expect("at least one restart");
    KMeansResult {
        labels: relabel_by_first_appearance(&labels),
        inertia,
        restart,
    }
}

pub fn relabel_by_first_appearance(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|l| match map.iter().find(|(from, _)| from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((*l, to));
                to
            }
        })
        .collect()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centres = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|w| *w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.push(points[next].clone());
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &centres[centres.len() - 1]));
        }
    }
    centres
}

fn assign(points: &[Vec<f64>], centres: &[Vec<f64>], labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let mut best = (f64::INFINITY, 0);
        for (c, centre) in centres.iter().enumerate() {
            let d = sq_dist(p, centre);
            if d < best.0 {
                best = (d, c);
            }
        }
        if *l != best.1 {
            *l = best.1;
            changed = true;
        }
    }
    changed
}

fn update_centres(points: &[Vec<f64>], labels: &[usize], centres: &mut [Vec<f64>]) -> Vec<usize> {
    let dim = points[0].len();
    let k = centres.len();
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; dim]; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for (dst, s) in centres[c].iter_mut().zip(&sums[c]) {
                *dst = s / counts[c] as f64;
            }
        }
    }
    counts
}

/// Moves the point farthest from its centroid (among clusters that can spare
/// one) into each empty cluster.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centres: &mut [Vec<f64>], counts: &mut [usize]) -> bool {
    let mut repaired = false;
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[labels[*i]] >= 2)
            .map(|(i, p)| (i, sq_dist(p, &centres[labels[i]])))
            .fold(None::<(usize, f64)>, |best, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        let Some((i, _)) = far else { break };
        counts[labels[i]] -= 1;
        labels[i] = empty;
        counts[empty] = 1;
        centres[empty] = points[i].clone();
        repaired = true;
    }
    repaired
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let mut centres = plus_plus_init(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter.max(1) {
        let changed = assign(points, &centres, &mut labels);
        let mut counts = update_centres(points, &labels, &mut centres);
        let repaired = repair_empty(points, &mut labels, &mut centres, &mut counts);
        if repaired {
            update_centres(points, &labels, &mut centres);
        }
        if !changed && !repaired {
            break;
        }
    }
    // a final pass guarantees no cluster is empty even if the loop ran out
    let mut counts = update_centres(points, &labels, &mut centres);
    if repair_empty(points, &mut labels, &mut centres, &mut counts) {
        update_centres(points, &labels, &mut centres);
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centres[l]))
        .sum();
    (labels, inertia)
}
