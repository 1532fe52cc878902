use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::{fit_kmeans, lloyd_labels, sq_dist, ClusterModel};
use super::{FingerprintError, Result};

pub const SILHOUETTE_SAMPLE_CAP: usize = 10_000;

/// Sorted subsample of at most `cap` indices out of `n`, fixed by `seed`.
pub fn subsample(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// Euclidean distance matrix of the given rows.
pub fn pairwise_distances(points: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let m = rows.len();
    let mut d = Array2::zeros((m, m));
    for i in 0..m {
        for j in i + 1..m {
            let v = sq_dist(points.row(rows[i]), points.row(rows[j])).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Mean silhouette from a precomputed distance matrix. Points alone in
/// their cluster score 0.
pub fn silhouette_from_distances(dist: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let m = labels.len();
    let k = labels.iter().max().map_or(0, |&l| l + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(FingerprintError::DegenerateInput("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..m {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, &l) in labels.iter().enumerate() {
            sums[l] += dist[[i, j]];
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / m as f64)
}

/// Mean silhouette coefficient, on a seeded uniform subsample of at most
/// `sample_cap` points.
pub fn silhouette(points: ArrayView2<f64>, labels: &[usize], sample_cap: usize, seed: u64) -> Result<f64> {
    if labels.len() != points.nrows() {
        return Err(FingerprintError::Shape(format!("{} labels for {} points", labels.len(), points.nrows())));
    }
    let rows = subsample(points.nrows(), sample_cap, seed);
    let dist = pairwise_distances(points, &rows);
    let sub: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    silhouette_from_distances(dist.view(), &sub)
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub best: usize,
    /// `(k, silhouette)` in increasing `k`.
    pub scores: Vec<(usize, f64)>,
    pub model: ClusterModel,
}

/// Fits K-means for every `k` in `k_min..=k_max` and keeps the highest
/// silhouette, preferring the smaller `k` on ties. Every fit and the
/// silhouette subsample share `seed`.
pub fn select_k(points: ArrayView2<f64>, k_min: usize, k_max: usize, seed: u64) -> Result<KSelection> {
    if k_min < 2 || k_min > k_max {
        return Err(FingerprintError::InvalidK(format!("bad k range {k_min}..={k_max}")));
    }
    let rows = subsample(points.nrows(), SILHOUETTE_SAMPLE_CAP, seed);
    let dist = pairwise_distances(points, &rows);
    let mut scores = Vec::new();
    let mut best: Option<(f64, ClusterModel)> = None;
    for k in k_min..=k_max {
        let model = fit_kmeans(points, k, seed)?;
        let labels = lloyd_labels(&model, points);
        let sub: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
        let s = silhouette_from_distances(dist.view(), &sub)?;
        log::info!("k = {k}: silhouette {s:.4}, inertia {:.4}", model.inertia);
        scores.push((k, s));
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, model));
        }
    }
    let (_, model) = best.expect("non-empty range");
    Ok(KSelection { best: model.n, scores, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gaussian_blobs;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn separated_blobs_score_high() {
        let (pts, labels, _) = gaussian_blobs(2, 50, 4, 50.0, 0.5, 1);
        assert!(silhouette(pts.view(), &labels, 10_000, 0).unwrap() > 0.9);
    }

    #[test]
    fn random_labels_on_one_blob_score_near_zero() {
        for seed in 0..10 {
            let (pts, _, _) = gaussian_blobs(1, 300, 3, 0.0, 1.0, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let labels: Vec<usize> = (0..300).map(|_| rng.random_range(0..3)).collect();
            let s = silhouette(pts.view(), &labels, 10_000, seed).unwrap();
            assert!(s.abs() < 0.1, "seed {seed}: {s}");
        }
    }

    #[test]
    fn coincident_clusters_give_zero() {
        let pts = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert_eq!(silhouette(pts.view(), &[0, 0, 1, 1], 100, 0).unwrap(), 0.0);
    }

    #[test]
    fn singletons_score_zero_and_one_cluster_is_an_error() {
        let pts = array![[0.0], [0.1], [5.0]];
        let s = silhouette(pts.view(), &[0, 0, 1], 100, 0).unwrap();
        let expected = ((5.0 - 0.1) / 5.0 + (4.9 - 0.1) / 4.9 + 0.0) / 3.0;
        assert!((s - expected).abs() < 1e-12);
        assert!(silhouette(pts.view(), &[0, 0, 0], 100, 0).is_err());
    }

    #[test]
    fn subsample_caps_and_is_stable() {
        let a = subsample(50_000, 10_000, 3);
        assert_eq!(a.len(), 10_000);
        assert_eq!(a, subsample(50_000, 10_000, 3));
        assert_eq!(subsample(10, 10_000, 3).len(), 10);
    }

    #[test]
    fn singleton_k_range() {
        let (pts, _, _) = gaussian_blobs(3, 20, 2, 20.0, 0.3, 4);
        let sel = select_k(pts.view(), 3, 3, 0).unwrap();
        assert_eq!(sel.best, 3);
        assert_eq!(sel.scores.len(), 1);
    }
}
