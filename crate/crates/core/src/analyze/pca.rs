use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{AnalyzeError, Result};

/// Two-component principal projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Array1<f64>,
    /// `2 x n`, orthonormal rows.
    pub components: Array2<f64>,
    /// `stations x 2`.
    pub coords: Array2<f64>,
    /// Variance (sum of squares / stations) along each component.
    pub variance: [f64; 2],
}

impl PcaProjection {
    pub fn project(&self, x: ArrayView1<f64>) -> [f64; 2] {
        let centered = &x - &self.mean;
        [self.components.row(0).dot(&centered), self.components.row(1).dot(&centered)]
    }

    pub fn project_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean.view().insert_axis(Axis(0))).dot(&self.components.t())
    }
}

/// Centers the rows and keeps the top two right singular directions. Within
/// each component the entry of largest magnitude is made positive.
pub fn pca_2d(x: ArrayView2<f64>) -> Result<PcaProjection> {
    let (m, n) = x.dim();
    if m < 3 {
        return Err(AnalyzeError::TooFewStations { needed: 3, got: m });
    }
    if n < 2 {
        return Err(AnalyzeError::Shape(format!("PCA to 2-D needs at least 2 dimensions, got {n}")));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean.view().insert_axis(Axis(0));
    if centered.iter().all(|&v| v == 0.0) {
        return Err(AnalyzeError::DegenerateInput("zero variance".into()));
    }

    // right singular vectors are the eigenvectors of the n x n scatter matrix;
    // the SVD of the centered data avoids squaring its condition number
    let a = DMatrix::from_fn(m, n, |i, j| centered[[i, j]]);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| svd.singular_values[q].total_cmp(&svd.singular_values[p]).then(p.cmp(&q)));

    let mut components = Array2::zeros((2, n));
    let mut variance = [0.0; 2];
    for (c, &idx) in order.iter().take(2).enumerate() {
        let mut row: Vec<f64> = (0..n).map(|j| v_t[(idx, j)]).collect();
        let lead = row.iter().cloned().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.row_mut(c).assign(&Array1::from(row));
        variance[c] = svd.singular_values[idx].powi(2) / m as f64;
    }
    let coords = centered.dot(&components.t());
    Ok(PcaProjection { mean, components, coords, variance })
}
