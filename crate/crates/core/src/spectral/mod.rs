//! Self-tuning spectral clustering of a segment distance matrix.
//!
//! Distances become a locally scaled Gaussian affinity, the symmetric
//! normalized Laplacian is diagonalized, a cluster count is chosen either by
//! the largest eigengap or by eigenvector rotation, and k-means runs on the
//! rows of the leading eigenvectors.

mod kmeans;
mod zp;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::wasserstein::DistanceMatrix;
use crate::{Error, Result};

pub use kmeans::{kmeans, relabel_by_first_appearance, KMeansOptions, KMeansResult};
pub use zp::{align, alignment_cost, ZpCandidate, ZpOptions, ZpSelection};

/// Gaussian affinity with per-point scales. Entries lie in `[0, 1]`; they
/// only reach zero through underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    entries: DMatrix<f64>,
    local_scales: Vec<f64>,
}

impl AffinityMatrix {
    /// Wraps a precomputed affinity after checking symmetry, range and a unit diagonal.
    pub fn from_entries(entries: DMatrix<f64>, local_scales: Vec<f64>) -> Result<Self> {
        let m = entries.nrows();
        if entries.ncols() != m || m == 0 {
            return Err(Error::Validation("affinity must be a non-empty square matrix".into()));
        }
        if local_scales.len() != m {
            return Err(Error::Validation("one local scale per row is required".into()));
        }
        for i in 0..m {
            if entries[(i, i)] != 1.0 {
                return Err(Error::Validation(format!("affinity diagonal at {i} is not 1")));
            }
            for j in 0..m {
                let v = entries[(i, j)];
                if !(0.0..=1.0).contains(&v) || v != entries[(j, i)] {
                    return Err(Error::Validation(format!("affinity entry ({i},{j}) = {v} is invalid")));
                }
            }
        }
        Ok(Self { entries, local_scales })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn local_scales(&self) -> &[f64] {
        &self.local_scales
    }
}

/// Number of neighbours used for the local scale of an `m`-point set.
pub fn neighbour_rank(m: usize) -> usize {
    let mut k = (m as f64).sqrt().ceil() as usize;
    while k * k < m {
        k += 1;
    }
    k.min(m.saturating_sub(1)).max(1)
}

pub fn affinity(d: &DistanceMatrix) -> AffinityMatrix {
    let m = d.size();
    let k = neighbour_rank(m);
    let scales: Vec<f64> = (0..m)
        .map(|i| {
            let mut row: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| d.get(i, j)).collect();
            if row.is_empty() {
                return 1.0;
            }
            row.sort_by(f64::total_cmp);
            let sigma = row[k - 1];
            if sigma > 0.0 {
                sigma
            } else {
                row.iter().copied().find(|v| *v > 0.0).unwrap_or(1.0)
            }
        })
        .collect();
    let entries = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else {
            let dij = d.get(i, j);
            (-(dij * dij) / (scales[i] * scales[j])).exp()
        }
    });
    AffinityMatrix {
        entries,
        local_scales: scales,
    }
}

/// Eigenpairs of `L_sym = I - Deg^{-1/2} A Deg^{-1/2}`, eigenvalues ascending.
/// Each eigenvector is signed so that its largest-magnitude entry (first one
/// on ties) is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub degrees: Vec<f64>,
}

impl SpectralDecomposition {
    pub fn size(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The `m x k` embedding whose rows are clustered.
    pub fn embedding(&self, k: usize) -> DMatrix<f64> {
        self.eigenvectors.columns(0, k).into_owned()
    }
}

pub fn laplacians(a: &AffinityMatrix) -> SpectralDecomposition {
    let m = a.size();
    let degrees: Vec<f64> = (0..m).map(|i| a.entries.row(i).sum()).collect();
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let l_sym = DMatrix::from_fn(m, m, |i, j| {
        let n = a.entries[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - n
        } else {
            -n
        }
    });
    let eig = SymmetricEigen::new(l_sym);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(m, m);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let mut pivot = 0;
        for r in 1..m {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    SpectralDecomposition {
        eigenvalues,
        eigenvectors,
        degrees,
    }
}

/// Default upper bound on the number of clusters for `m` segments.
pub fn default_k_max(m: usize) -> usize {
    m.saturating_sub(1).clamp(1, 10)
}

/// Count of eigenvalues before the largest gap `lambda_{c+1} - lambda_c`,
/// searched over `1 <= c <= k_max`; the smallest `c` wins ties.
pub fn select_k_eigengap(dec: &SpectralDecomposition, k_max: usize) -> usize {
    let lambda = &dec.eigenvalues;
    if lambda.len() < 2 {
        return 1;
    }
    let k_max = k_max.clamp(1, lambda.len() - 1);
    let mut best = (f64::NEG_INFINITY, 1);
    for c in 1..=k_max {
        let gap = lambda[c] - lambda[c - 1];
        if gap > best.0 {
            best = (gap, c);
        }
    }
    best.1
}

pub fn select_k_zp(a: &AffinityMatrix, k_max: usize, options: &ZpOptions) -> ZpSelection {
    zp_from_decomposition(&laplacians(a), k_max, options)
}

/// Eigenvectors of the smallest `L_sym` eigenvalues are those of the largest
/// normalized-affinity eigenvalues, in the same order.
fn zp_from_decomposition(dec: &SpectralDecomposition, k_max: usize, options: &ZpOptions) -> ZpSelection {
    if dec.size() < 2 {
        return ZpSelection {
            k: 1,
            candidates: Vec::new(),
        };
    }
    zp::select_from_vectors(&dec.eigenvectors, k_max, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Eigengap,
    Zp,
    /// A caller-chosen count, clamped to `1..=m`.
    Fixed(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// `None` uses [`default_k_max`].
    pub k_max: Option<usize>,
    pub kmeans: KMeansOptions,
    pub zp: ZpOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub method: ClusterMethod,
    /// One label per segment in `[0, k)`, numbered by first appearance.
    pub labels: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zp: Option<ZpSelection>,
}

impl ClusterAssignment {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Validation("k must be positive".into()));
        }
        let mut seen = vec![false; self.k];
        for &l in &self.labels {
            if l >= self.k {
                return Err(Error::Validation(format!("label {l} outside [0, {})", self.k)));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("cluster {missing} is empty")));
        }
        Ok(())
    }

    /// Segment indices of each cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

pub fn spectral_cluster(d: &DistanceMatrix, method: ClusterMethod, seed: u64) -> Result<ClusterAssignment> {
    spectral_cluster_with(d, method, seed, &SpectralOptions::default())
}

pub fn spectral_cluster_with(
    d: &DistanceMatrix,
    method: ClusterMethod,
    seed: u64,
    options: &SpectralOptions,
) -> Result<ClusterAssignment> {
    let m = d.size();
    if m == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let dec = laplacians(&affinity(d));
    let k_max = options.k_max.unwrap_or_else(|| default_k_max(m));
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be positive".into()));
    }
    let mut zp = None;
    let k = match method {
        _ if m == 1 => 1,
        ClusterMethod::Eigengap => select_k_eigengap(&dec, k_max),
        ClusterMethod::Zp => {
            let sel = zp_from_decomposition(&dec, k_max, &options.zp);
            if sel.hit_iteration_cap() {
                log::warn!("rotation search hit the iteration cap; using the best cost seen");
            }
            let k = sel.k;
            zp = Some(sel);
            k
        }
        ClusterMethod::Fixed(k) => k.clamp(1, m),
    };
    let labels = if k == 1 {
        vec![0; m]
    } else {
        let emb = dec.embedding(k);
        let points: Vec<Vec<f64>> = emb.row_iter().map(|r| r.iter().copied().collect()).collect();
        kmeans(&points, k, options.kmeans, seed).labels
    };
    let out = ClusterAssignment {
        k,
        method,
        labels,
        eigenvalues: dec.eigenvalues,
        zp,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::wasserstein::{distance_matrix, EmpiricalDist};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn dm(rows: Vec<Vec<f64>>) -> DistanceMatrix {
        let m = rows.len();
        DistanceMatrix::from_rows(m, rows.concat()).unwrap()
    }

    fn block_affinity(sizes: &[usize]) -> AffinityMatrix {
        let m: usize = sizes.iter().sum();
        let block: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
        let e = DMatrix::from_fn(m, m, |i, j| if block[i] == block[j] { 1.0 } else { 0.0 });
        AffinityMatrix::from_entries(e, vec![1.0; m]).unwrap()
    }

    fn partition_key(labels: &[usize]) -> Vec<usize> {
        relabel_by_first_appearance(labels)
    }

    #[test]
    fn zero_distances_give_all_ones() {
        let a = affinity(&dm(vec![vec![0.0; 3]; 3]));
        assert!(a.entries().iter().all(|v| *v == 1.0));
        assert_eq!(a.local_scales(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn local_scale_uses_kth_neighbour() {
        assert_eq!(neighbour_rank(4), 2);
        assert_eq!(neighbour_rank(10), 4);
        assert_eq!(neighbour_rank(2), 1);
        let d = dm(vec![
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 0.0, 5.0, 4.0],
            vec![2.0, 5.0, 0.0, 6.0],
            vec![3.0, 4.0, 6.0, 0.0],
        ]);
        let a = affinity(&d);
        assert_eq!(a.local_scales(), &[2.0, 4.0, 5.0, 4.0]);
        let expect = (-(1.0f64) / (2.0 * 4.0)).exp();
        assert!((a.get(0, 1) - expect).abs() < 1e-15);
    }

    #[test]
    fn equal_scale_entry_is_inverse_e() {
        // every off-diagonal distance equals d, so every scale is d too
        let d = 0.7;
        let m = dm(vec![vec![0.0, d, d], vec![d, 0.0, d], vec![d, d, 0.0]]);
        let a = affinity(&m);
        assert!((a.get(0, 2) - (-1f64).exp()).abs() < 1e-15);
        assert!((a.get(1, 2) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn duplicate_rows_fall_back_to_positive_scale() {
        let d = dm(vec![
            vec![0.0, 0.0, 0.0, 2.0],
            vec![0.0, 0.0, 0.0, 2.0],
            vec![0.0, 0.0, 0.0, 2.0],
            vec![2.0, 2.0, 2.0, 0.0],
        ]);
        let a = affinity(&d);
        assert_eq!(a.local_scales(), &[2.0, 2.0, 2.0, 2.0]);
        assert!(a.entries().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn complete_graph_spectrum() {
        let a = affinity(&dm(vec![vec![0.0; 3]; 3]));
        let dec = laplacians(&a);
        let want = [0.0, 1.0, 1.0];
        for (l, w) in dec.eigenvalues.iter().zip(want) {
            assert!((l - w).abs() < 1e-12, "{:?}", dec.eigenvalues);
        }
    }

    #[test]
    fn disconnected_blocks_give_zero_eigenvalues() {
        let dec = laplacians(&block_affinity(&[3, 3]));
        assert!(dec.eigenvalues[0].abs() < 1e-12);
        assert!(dec.eigenvalues[1].abs() < 1e-12);
        assert!(dec.eigenvalues[2] > 0.5);
        assert_eq!(select_k_eigengap(&dec, 5), 2);
    }

    fn decomposition_of(lambda: &[f64]) -> SpectralDecomposition {
        let m = lambda.len();
        SpectralDecomposition {
            eigenvalues: lambda.to_vec(),
            eigenvectors: DMatrix::identity(m, m),
            degrees: vec![1.0; m],
        }
    }

    #[test]
    fn eigengap_examples() {
        assert_eq!(select_k_eigengap(&decomposition_of(&[0.0, 0.01, 0.9, 1.1]), 3), 2);
        assert_eq!(select_k_eigengap(&decomposition_of(&[0.0, 0.02, 0.05, 0.9, 1.0]), 4), 3);
        assert_eq!(select_k_eigengap(&decomposition_of(&[0.0]), 10), 1);
        // equal gaps resolve to the smaller count
        assert_eq!(select_k_eigengap(&decomposition_of(&[0.0, 0.5, 1.0]), 2), 1);
    }

    #[test]
    fn zp_finds_exact_blocks() {
        let opts = ZpOptions::default();
        assert_eq!(select_k_zp(&block_affinity(&[4, 5, 3]), 6, &opts).k, 3);
        assert_eq!(select_k_zp(&block_affinity(&[5, 5]), 6, &opts).k, 2);
    }

    fn noisy_blocks(seed: u64, blocks: usize, size: usize) -> AffinityMatrix {
        let mut rng = stream_rng(seed, 0);
        let m = blocks * size;
        let mut e = DMatrix::identity(m, m);
        for i in 0..m {
            for j in i + 1..m {
                let v = if i / size == j / size {
                    rng.random_range(0.6..1.0)
                } else {
                    rng.random_range(0.0..0.1)
                };
                e[(i, j)] = v;
                e[(j, i)] = v;
            }
        }
        AffinityMatrix::from_entries(e, vec![1.0; m]).unwrap()
    }

    #[test]
    fn zp_recovers_noisy_four_blocks() {
        let hits = (0..50)
            .filter(|&s| select_k_zp(&noisy_blocks(s, 4, 6), 10, &ZpOptions::default()).k == 4)
            .count();
        assert!(hits >= 45, "only {hits}/50");
    }

    #[test]
    fn decomposition_is_orthonormal_and_bounded() {
        let d = dm(vec![
            vec![0.0, 1.0, 4.0, 2.0, 3.0],
            vec![1.0, 0.0, 3.0, 1.5, 2.5],
            vec![4.0, 3.0, 0.0, 2.0, 1.0],
            vec![2.0, 1.5, 2.0, 0.0, 1.2],
            vec![3.0, 2.5, 1.0, 1.2, 0.0],
        ]);
        let dec = laplacians(&affinity(&d));
        let v = &dec.eigenvectors;
        let err = (v.transpose() * v - DMatrix::<f64>::identity(5, 5)).abs().max();
        assert!(err < 1e-8);
        assert!(dec.eigenvalues[0] >= -1e-10);
        assert!(*dec.eigenvalues.last().unwrap() <= 2.0 + 1e-10);
        for c in 0..5 {
            let col = v.column(c);
            let pivot = (0..5).fold(0, |p, r| if col[r].abs() > col[p].abs() { r } else { p });
            assert!(col[pivot] > 0.0);
        }
    }

    #[test]
    fn single_segment_is_one_cluster() {
        let r = spectral_cluster(&dm(vec![vec![0.0]]), ClusterMethod::Zp, 1).unwrap();
        assert_eq!(r.k, 1);
        assert_eq!(r.labels, vec![0]);
    }

    #[test]
    fn two_distinct_segments_forced_apart() {
        let d = dm(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let r = spectral_cluster(&d, ClusterMethod::Fixed(2), 1).unwrap();
        assert_eq!(r.labels, vec![0, 1]);
        let r = spectral_cluster(&d, ClusterMethod::Zp, 1).unwrap();
        assert_eq!(r.labels, vec![0, 1]);
    }

    fn gaussian_segments(seed: u64, sigmas: &[f64], n: usize) -> DistanceMatrix {
        let dists: Vec<EmpiricalDist> = sigmas
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = stream_rng(seed, i as u64);
                let normal = Normal::new(0.0, *s).unwrap();
                EmpiricalDist::new((0..n).map(|_| normal.sample(&mut rng)).collect()).unwrap()
            })
            .collect();
        distance_matrix(&dists)
    }

    #[test]
    fn equal_sigma_pairs_cluster_together() {
        let d = gaussian_segments(11, &[0.25, 0.25, 4.0, 4.0], 10_000);
        let r = spectral_cluster(&d, ClusterMethod::Zp, 5).unwrap();
        assert_eq!(r.labels, vec![0, 0, 1, 1]);
        // with K = 2 each scale equals the between-pair distance, so the
        // spectrum is about (0, 0.54, 1, 1) and the largest gap comes first
        let r = spectral_cluster(&d, ClusterMethod::Eigengap, 5).unwrap();
        assert_eq!(r.k, 1);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let d = gaussian_segments(3, &[0.3, 0.5, 1.0, 1.1, 2.0, 2.2, 4.0], 2_000);
        let a = spectral_cluster(&d, ClusterMethod::Zp, 8).unwrap();
        let b = spectral_cluster(&d, ClusterMethod::Zp, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assignment_json_round_trip() {
        let d = gaussian_segments(4, &[0.5, 0.5, 2.0], 1_000);
        let a = spectral_cluster(&d, ClusterMethod::Eigengap, 2).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"method\":\"eigengap\""));
        let back: ClusterAssignment = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn affinity_is_valid(points in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let rows: Vec<Vec<f64>> = points.iter().map(|x| points.iter().map(|y| (x - y).abs()).collect()).collect();
            let a = affinity(&dm(rows));
            let m = points.len();
            for i in 0..m {
                prop_assert_eq!(a.get(i, i), 1.0);
                for j in 0..m {
                    prop_assert!(a.get(i, j) >= 0.0 && a.get(i, j) <= 1.0);
                    prop_assert_eq!(a.get(i, j), a.get(j, i));
                }
            }
            let dec = laplacians(&a);
            prop_assert!(dec.eigenvalues[0] >= -1e-10);
            prop_assert!(*dec.eigenvalues.last().unwrap() <= 2.0 + 1e-10);
        }

        #[test]
        fn relabelling_segments_permutes_labels(seed in 0u64..1000) {
            let mut rng = stream_rng(seed, 99);
            let m = 9;
            let centres: Vec<f64> = (0..m).map(|i| (i / 3) as f64 * 10.0 + rng.sample::<f64, _>(StandardNormal) * 0.1).collect();
            let rows = |c: &[f64]| c.iter().map(|x| c.iter().map(|y| (x - y).abs()).collect()).collect::<Vec<Vec<f64>>>();
            let base = spectral_cluster(&dm(rows(&centres)), ClusterMethod::Eigengap, seed).unwrap();
            let perm: Vec<usize> = (0..m).rev().collect();
            let permuted: Vec<f64> = perm.iter().map(|&i| centres[i]).collect();
            let other = spectral_cluster(&dm(rows(&permuted)), ClusterMethod::Eigengap, seed).unwrap();
            let mapped: Vec<usize> = perm.iter().map(|&i| base.labels[i]).collect();
            prop_assert_eq!(partition_key(&mapped), partition_key(&other.labels));
        }
    }
}
