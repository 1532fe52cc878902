use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FingerprintError, Result};

pub const RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// `n x dim`, one centroid per row.
    pub centroids: Array2<f64>,
    pub n: usize,
    pub inertia: f64,
    pub seed: u64,
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        _ => a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum(),
    }
}

/// Index and squared distance of the nearest centroid; ties go to the lower
/// index.
pub(crate) fn nearest(centroids: ArrayView2<f64>, x: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Number of distinct rows (bitwise comparison, with `-0.0 == 0.0`).
pub fn distinct_rows(points: ArrayView2<f64>) -> usize {
    let set: HashSet<Vec<u64>> =
        points.rows().into_iter().map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect()).collect();
    set.len()
}

/// Distance-weighted ("k-means++") seeding.
fn careful_seeds(points: ArrayView2<f64>, n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let count = points.nrows();
    let mut centroids = Array2::zeros((n, points.ncols()));
    let first = rng.random_range(0..count);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..n {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..count)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

/// Result of one Lloyd run.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub trace: Vec<f64>,
}

/// Lloyd iterations from the given centroids until the assignment stops
/// changing or `max_iter` is reached. An emptied cluster is reseeded with
/// the point farthest from its current centroid.
pub fn lloyd(points: ArrayView2<f64>, init: Array2<f64>, max_iter: usize) -> LloydRun {
    let (count, dim) = points.dim();
    let n = init.nrows();
    let mut centroids = init;
    let mut labels = vec![usize::MAX; count];
    let mut dists = vec![0.0; count];
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.rows().into_iter().enumerate() {
            let (c, d) = nearest(centroids.view(), p);
            changed |= labels[i] != c;
            labels[i] = c;
            dists[i] = d;
        }
        let inertia: f64 = dists.iter().sum();
        if let Some(&prev) = trace.last() {
            // Lloyd steps never increase the objective; allow rounding noise.
            assert!(inertia <= prev * (1.0 + 1e-12) + 1e-12, "inertia rose from {prev} to {inertia}");
        }
        trace.push(inertia);
        if !changed {
            break;
        }

        let mut sums = Array2::<f64>::zeros((n, dim));
        let mut sizes = vec![0usize; n];
        for (i, p) in points.rows().into_iter().enumerate() {
            let mut row = sums.row_mut(labels[i]);
            row += &p;
            sizes[labels[i]] += 1;
        }
        for c in 0..n {
            if sizes[c] > 0 {
                let mean = &sums.row(c) / sizes[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        for c in 0..n {
            if sizes[c] == 0 {
                // take the worst-served point from a cluster that can spare it
                let far = (0..count)
                    .filter(|&i| sizes[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("more points than clusters");
                sizes[labels[far]] -= 1;
                labels[far] = c;
                sizes[c] = 1;
                dists[far] = 0.0;
                centroids.row_mut(c).assign(&points.row(far));
            }
        }
    }
    let inertia = *trace.last().unwrap_or(&0.0);
    LloydRun { centroids, labels, inertia, trace }
}

/// Single-point transfers after Lloyd: moves a point to another cluster
/// whenever that lowers the objective, until no move helps. The result is
/// also a Lloyd fixpoint.
pub fn hartigan_refine(points: ArrayView2<f64>, run: &mut LloydRun, max_passes: usize) {
    let (count, dim) = points.dim();
    let n = run.centroids.nrows();
    if count == 0 || run.labels.len() != count {
        return;
    }
    let mut sizes = vec![0usize; n];
    let mut sums = Array2::<f64>::zeros((n, dim));
    for (i, p) in points.rows().into_iter().enumerate() {
        sizes[run.labels[i]] += 1;
        let mut row = sums.row_mut(run.labels[i]);
        row += &p;
    }
    let mut means = run.centroids.clone();
    for c in 0..n {
        if sizes[c] > 0 {
            means.row_mut(c).assign(&(&sums.row(c) / sizes[c] as f64));
        }
    }
    let mut moved_any = false;
    for _ in 0..max_passes {
        let mut moved = false;
        for (i, p) in points.rows().into_iter().enumerate() {
            let a = run.labels[i];
            if sizes[a] < 2 {
                continue;
            }
            let na = sizes[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(p, means.row(a));
            let mut best = (a, 0.0);
            for b in (0..n).filter(|&b| b != a) {
                let nb = sizes[b] as f64;
                let delta = nb / (nb + 1.0) * sq_dist(p, means.row(b)) - removal;
                // strict improvement beyond rounding noise
                if delta < best.1 - 1e-12 * removal.max(1e-300) {
                    best = (b, delta);
                }
            }
            let b = best.0;
            if b == a {
                continue;
            }
            {
                let mut row = sums.row_mut(a);
                row -= &p;
            }
            {
                let mut row = sums.row_mut(b);
                row += &p;
            }
            sizes[a] -= 1;
            sizes[b] += 1;
            means.row_mut(a).assign(&(&sums.row(a) / sizes[a] as f64));
            means.row_mut(b).assign(&(&sums.row(b) / sizes[b] as f64));
            run.labels[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    if !moved_any {
        return;
    }
    // exact recomputation from scratch
    let mut sums = Array2::<f64>::zeros((n, dim));
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut row = sums.row_mut(run.labels[i]);
        row += &p;
    }
    for c in 0..n {
        run.centroids.row_mut(c).assign(&(&sums.row(c) / sizes[c] as f64));
    }
    let inertia: f64 = points.rows().into_iter().zip(&run.labels).map(|(p, &l)| sq_dist(p, run.centroids.row(l))).sum();
    let prev = *run.trace.last().unwrap_or(&f64::INFINITY);
    assert!(inertia <= prev * (1.0 + 1e-12) + 1e-12, "inertia rose from {prev} to {inertia}");
    run.trace.push(inertia);
    run.inertia = inertia;
    // transfers can leave a point nearer another centroid only on exact ties;
    // a final Lloyd pass settles them
    let settled = lloyd(points, run.centroids.clone(), MAX_ITERATIONS);
    let mut trace = std::mem::take(&mut run.trace);
    trace.extend(&settled.trace);
    *run = LloydRun { trace, ..settled };
}

/// K-means with careful seeding and [`RESTARTS`] restarts, keeping the run
/// with the lowest inertia (earliest on ties).
pub fn fit_kmeans(points: ArrayView2<f64>, n: usize, seed: u64) -> Result<ClusterModel> {
    if n < 2 {
        return Err(FingerprintError::InvalidK(format!("need at least 2 clusters, got {n}")));
    }
    let distinct = distinct_rows(points);
    if distinct < n {
        return Err(FingerprintError::DegenerateInput(format!("{distinct} distinct points for {n} clusters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<LloydRun> = None;
    for _ in 0..RESTARTS {
        let init = careful_seeds(points, n, &mut rng);
        let mut run = lloyd(points, init, MAX_ITERATIONS);
        hartigan_refine(points, &mut run, MAX_ITERATIONS);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterModel { centroids: best.centroids, n, inertia: best.inertia, seed })
}

/// Nearest-centroid label of every row.
pub fn lloyd_labels(model: &ClusterModel, points: ArrayView2<f64>) -> Vec<usize> {
    points.rows().into_iter().map(|p| nearest(model.centroids.view(), p).0).collect()
}

/// Nearest-centroid index, ties to the lowest index.
pub fn assign(model: &ClusterModel, embedding: ArrayView1<f64>) -> Result<usize> {
    if embedding.len() != model.dim() {
        return Err(FingerprintError::Shape(format!(
            "embedding has {} dimensions, model has {}",
            embedding.len(),
            model.dim()
        )));
    }
    Ok(nearest(model.centroids.view(), embedding).0)
}
