use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnalyzeError, Result};

pub const MAX_OUTER_ITERATIONS: usize = 200;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;
const ROW_TOLERANCE: f64 = 1e-8;
const ROW_MAX_ITERATIONS: usize = 1000;
const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Data points as convex combinations of `k` archetypes, which are in turn
/// convex combinations of data points.
#[derive(Debug, Clone)]
pub struct ArchetypeModel {
    /// `k x n`, one archetype per row; equals `beta . X`.
    pub archetypes: Array2<f64>,
    /// `stations x k`.
    pub alpha: Array2<f64>,
    /// `k x stations`.
    pub beta: Array2<f64>,
    pub rss: f64,
    /// RSS after each outer iteration.
    pub trace: Vec<f64>,
}

impl ArchetypeModel {
    pub fn k(&self) -> usize {
        self.archetypes.nrows()
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Minimizes a convex quadratic over the simplex by accelerated projected
/// gradient with an objective-based momentum restart, so the objective
/// never rises above its value at `w`. `eval` returns the objective and
/// writes the gradient; `lipschitz` bounds the gradient's Lipschitz
/// constant.
fn simplex_qp(w: &mut [f64], lipschitz: f64, mut eval: impl FnMut(&[f64], &mut [f64]) -> f64) -> f64 {
    let k = w.len();
    let mut grad = vec![0.0; k];
    let mut f = eval(w, &mut grad);
    if lipschitz <= 0.0 || !lipschitz.is_finite() {
        return f;
    }
    let step = 1.0 / lipschitz;
    let mut y = w.to_vec();
    let mut t = 1.0f64;
    let mut cand = vec![0.0; k];
    let mut gy = vec![0.0; k];
    for _ in 0..ROW_MAX_ITERATIONS {
        eval(&y, &mut gy);
        for i in 0..k {
            cand[i] = y[i] - step * gy[i];
        }
        project_simplex(&mut cand);
        let fc = eval(&cand, &mut grad);
        if fc > f {
            // momentum overshot: plain projected step from w instead
            eval(w, &mut grad);
            for i in 0..k {
                cand[i] = w[i] - step * grad[i];
            }
            project_simplex(&mut cand);
            let fp = eval(&cand, &mut grad);
            t = 1.0;
            if fp > f {
                break;
            }
            y.copy_from_slice(&cand);
            w.copy_from_slice(&cand);
            let done = f - fp <= ROW_TOLERANCE * f.abs() + 1e-300;
            f = fp;
            if done {
                break;
            }
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        for i in 0..k {
            y[i] = cand[i] + (t - 1.0) / t_next * (cand[i] - w[i]);
        }
        t = t_next;
        w.copy_from_slice(&cand);
        let done = f - fc <= ROW_TOLERANCE * f.abs() + 1e-300;
        f = fc;
        if done {
            break;
        }
    }
    f
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
fn max_eigenvalue(m: ArrayView2<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    dm.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max)
}

/// Simplex-constrained least squares `min ||x - w . Z||^2` for one row,
/// warm-started from `w`.
pub fn simplex_least_squares(z: ArrayView2<f64>, x: ArrayView1<f64>, w: &mut [f64]) -> f64 {
    let gram = z.dot(&z.t());
    let c = z.dot(&x);
    let xx = x.dot(&x);
    let lipschitz = 2.0 * max_eigenvalue(gram.view()) * (1.0 + 1e-12);
    solve_row(gram.view(), c.view(), xx, lipschitz, w)
}

fn solve_row(gram: ArrayView2<f64>, c: ArrayView1<f64>, xx: f64, lipschitz: f64, w: &mut [f64]) -> f64 {
    let k = w.len();
    simplex_qp(w, lipschitz, |w, g| {
        let mut f = xx;
        for i in 0..k {
            let mut gw = 0.0;
            for j in 0..k {
                gw += gram[[i, j]] * w[j];
            }
            f += w[i] * gw - 2.0 * c[i] * w[i];
            g[i] = 2.0 * gw - 2.0 * c[i];
        }
        f
    })
}

fn residual_sum_of_squares(x: ArrayView2<f64>, alpha: &Array2<f64>, z: &Array2<f64>) -> f64 {
    let r = &x - &alpha.dot(z);
    r.iter().map(|v| v * v).sum()
}

/// Greedy furthest-point selection of `k` distinct rows: each pick is the
/// row furthest from the convex hull of the rows already chosen. A seeded
/// random row starts the search and is then discarded. On data inside a
/// polytope with `k` vertices this returns exactly those vertices.
pub fn furthest_hull(x: ArrayView2<f64>, k: usize, seed: u64) -> Vec<usize> {
    let m = x.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = x.row(rng.random_range(0..m));
    let pick = |score: &[f64], chosen: &[usize]| -> usize {
        (0..m)
            .filter(|i| !chosen.contains(i))
            .max_by(|&a, &b| score[a].total_cmp(&score[b]).then(b.cmp(&a)))
            .expect("more rows than archetypes")
    };
    let score: Vec<f64> = x.rows().into_iter().map(|r| (&r - &start).mapv(|v| v * v).sum()).collect();
    let mut chosen = vec![pick(&score, &[])];
    // warm starts for the per-row hull distances
    let mut weights: Vec<Vec<f64>> = vec![vec![1.0]; m];
    while chosen.len() < k {
        let z = x.select(Axis(0), &chosen);
        let gram = z.dot(&z.t());
        let lipschitz = 2.0 * max_eigenvalue(gram.view()) * (1.0 + 1e-12);
        let score: Vec<f64> = (0..m)
            .map(|i| {
                let row = x.row(i);
                let w = &mut weights[i];
                solve_row(gram.view(), z.dot(&row).view(), row.dot(&row), lipschitz, w).max(0.0)
            })
            .collect();
        chosen.push(pick(&score, &chosen));
        for w in &mut weights {
            w.push(0.0);
        }
    }
    chosen
}

fn check_input(x: ArrayView2<f64>, k: usize) -> Result<()> {
    let m = x.nrows();
    if k < 2 || k >= m {
        return Err(AnalyzeError::InvalidK(format!("need 2 <= k < stations, got k = {k} with {m} stations")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AnalyzeError::DegenerateInput("non-finite values".into()));
    }
    let first = x.row(0);
    if x.rows().into_iter().all(|r| r == first) {
        return Err(AnalyzeError::DegenerateInput("all points identical".into()));
    }
    Ok(())
}

/// Archetypal analysis by alternating simplex-constrained least squares,
/// initialized from furthest-point rows.
pub fn archetypal_analysis(x: ArrayView2<f64>, k: usize, seed: u64) -> Result<ArchetypeModel> {
    check_input(x, k)?;
    let m = x.nrows();
    let mut beta = Array2::zeros((k, m));
    for (a, &row) in furthest_hull(x, k, seed).iter().enumerate() {
        beta[[a, row]] = 1.0;
    }
    let alpha = Array2::from_elem((m, k), 1.0 / k as f64);
    fit_from(x, alpha, beta)
}

/// Alternating updates from a given feasible `(alpha, beta)`; RSS never
/// exceeds that of the starting point.
pub fn fit_from(x: ArrayView2<f64>, mut alpha: Array2<f64>, mut beta: Array2<f64>) -> Result<ArchetypeModel> {
    let (m, _) = x.dim();
    let k = beta.nrows();
    check_input(x, k)?;
    if alpha.dim() != (m, k) || beta.ncols() != m {
        return Err(AnalyzeError::Shape("alpha/beta do not match data".into()));
    }
    let xxt_max = max_eigenvalue(x.t().dot(&x).view());
    let mut z = beta.dot(&x);
    let mut rss = residual_sum_of_squares(x, &alpha, &z);
    let mut trace = Vec::new();
    for _ in 0..MAX_OUTER_ITERATIONS {
        // alpha rows given Z
        let gram = z.dot(&z.t());
        let lipschitz = 2.0 * max_eigenvalue(gram.view()) * (1.0 + 1e-12);
        for (i, mut row) in alpha.rows_mut().into_iter().enumerate() {
            let c = z.dot(&x.row(i));
            let xi = x.row(i);
            let mut w = row.to_vec();
            solve_row(gram.view(), c.view(), xi.dot(&xi), lipschitz, &mut w);
            row.assign(&Array1::from(w));
        }

        // beta rows one at a time on the exact RSS
        let mut resid = &x - &alpha.dot(&z);
        for j in 0..k {
            let aj = alpha.column(j).to_owned();
            let aa = aj.dot(&aj);
            if aa <= 0.0 {
                continue;
            }
            // residual without archetype j
            let zj = z.row(j).to_owned();
            for (mut r, &a) in resid.rows_mut().into_iter().zip(aj.iter()) {
                r.scaled_add(a, &zj);
            }
            // min aa * |X^T b|^2 - 2 b . X R^T a_j
            let target = resid.t().dot(&aj) / aa;
            let c = x.dot(&target);
            let lipschitz = 2.0 * xxt_max * (1.0 + 1e-12);
            let mut b = beta.row(j).to_vec();
            simplex_qp(&mut b, lipschitz, |b, g| {
                let u = x.t().dot(&ArrayView1::from(b));
                let gu = x.dot(&u);
                let mut f = 0.0;
                for i in 0..m {
                    f += b[i] * gu[i] - 2.0 * c[i] * b[i];
                    g[i] = 2.0 * gu[i] - 2.0 * c[i];
                }
                f
            });
            beta.row_mut(j).assign(&ArrayView1::from(&b[..]));
            let new_zj = x.t().dot(&beta.row(j));
            z.row_mut(j).assign(&new_zj);
            for (mut r, &a) in resid.rows_mut().into_iter().zip(aj.iter()) {
                r.scaled_add(-a, &new_zj);
            }
        }

        let new_rss = residual_sum_of_squares(x, &alpha, &z);
        assert!(new_rss <= rss * (1.0 + 1e-9) + 1e-12, "RSS rose from {rss} to {new_rss}");
        debug_assert!(on_simplex(alpha.view()) && on_simplex(beta.view()));
        trace.push(new_rss);
        let improvement = rss - new_rss;
        rss = new_rss;
        if improvement <= RELATIVE_TOLERANCE * rss.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(ArchetypeModel { archetypes: z, alpha, beta, rss, trace })
}

/// True when every row is non-negative and sums to one within 1e-6.
pub fn on_simplex(m: ArrayView2<f64>) -> bool {
    m.rows().into_iter().all(|r| r.iter().all(|&v| v >= 0.0) && (r.sum() - 1.0).abs() <= SIMPLEX_TOLERANCE)
}

/// RSS for each `k`. From the second `k` on, the fit also starts from the
/// previous solution plus the worst-reconstructed point as a new archetype
/// and keeps the better result, so RSS does not rise with `k`.
pub fn rss_scree(x: ArrayView2<f64>, ks: impl IntoIterator<Item = usize>, seed: u64) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    let mut prev: Option<ArchetypeModel> = None;
    for k in ks {
        let mut model = archetypal_analysis(x, k, seed)?;
        if let Some(p) = prev.as_ref().filter(|p| p.k() + 1 == k) {
            let warm = fit_from(x, pad_alpha(&p.alpha), grow_beta(x, p))?;
            if warm.rss < model.rss {
                model = warm;
            }
        }
        out.push((k, model.rss));
        prev = Some(model);
    }
    Ok(out)
}

fn pad_alpha(alpha: &Array2<f64>) -> Array2<f64> {
    let (m, k) = alpha.dim();
    let mut a = Array2::zeros((m, k + 1));
    a.slice_mut(ndarray::s![.., ..k]).assign(alpha);
    a
}

fn grow_beta(x: ArrayView2<f64>, model: &ArchetypeModel) -> Array2<f64> {
    let resid = &x - &model.alpha.dot(&model.archetypes);
    let errors = resid.map_axis(Axis(1), |r| r.dot(&r));
    let worst = (0..errors.len()).max_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(b.cmp(&a))).unwrap_or(0);
    let (k, m) = model.beta.dim();
    let mut b = Array2::zeros((k + 1, m));
    b.slice_mut(ndarray::s![..k, ..]).assign(&model.beta);
    b[[k, worst]] = 1.0;
    b
}

/// Archetype count at the strongest bend of the scree: the largest
/// discrete second difference, smaller `k` on ties.
pub fn select_archetype_count(scree: &[(usize, f64)]) -> Result<usize> {
    if scree.len() < 3 {
        return Err(AnalyzeError::InsufficientScree(scree.len()));
    }
    if scree.windows(2).any(|w| w[1].0 != w[0].0 + 1) {
        return Err(AnalyzeError::InvalidK("scree k values must be consecutive".into()));
    }
    let scale = scree.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
    let mut best: Option<(usize, f64)> = None;
    for w in scree.windows(3) {
        let d = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if best.is_none_or(|(_, b)| d > b + 1e-12 * scale) {
            best = Some((w[1].0, d));
        }
    }
    Ok(best.expect("at least one window").0)
}
