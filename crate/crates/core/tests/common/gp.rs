//! Emulator reference algebra: the bordered reference-prior system solved densely.

use nalgebra::{DMatrix, DVector};
use pba_core::emulator::correlation::correlation_matrix;
use pba_core::emulator::{correlation, BasisSpec, CorrelationFamily, CorrelationSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FAMILIES: [CorrelationFamily; 4] = [
    CorrelationFamily::PowerExponential { p: 2.0 },
    CorrelationFamily::PowerExponential { p: 1.3 },
    CorrelationFamily::Matern32,
    CorrelationFamily::Matern52,
];

pub fn uniform_points(r: &mut ChaCha8Rng, n: usize, dims: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, dims, |_, _| r.random::<f64>())
}

pub fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

pub struct Oracle {
    pub mean: f64,
    pub variance: f64,
    pub beta: DVector<f64>,
    pub sigma_sq: f64,
}

/// Reference-prior predictive from the bordered system `[A H; Hᵀ 0]`, solved by LU.
/// `[t; h]ᵀ M⁻¹ [y; 0]` is the mean and `1 - [t; h]ᵀ M⁻¹ [t; h]` the scale factor.
pub fn bordered_oracle(points: &DMatrix<f64>, y: &DVector<f64>, basis: &BasisSpec, corr: &CorrelationSpec, x: &[f64]) -> Oracle {
    let n = points.nrows();
    let q = basis.len();
    let mut m = DMatrix::zeros(n + q, n + q);
    for i in 0..n {
        for j in 0..n {
            let same = i == j;
            m[(i, j)] = if same { 1.0 } else { (1.0 - corr.nugget) * correlation(&row(points, i), &row(points, j), corr) };
        }
        let h = basis.eval(&row(points, i));
        for k in 0..q {
            m[(i, n + k)] = h[k];
            m[(n + k, i)] = h[k];
        }
    }
    let lu = m.clone().lu();
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(y);
    let sol = lu.solve(&rhs).unwrap();
    let quad = y.dot(&sol.rows(0, n));
    let sigma_sq = quad / (n as f64 - q as f64 - 2.0);
    let mut th = DVector::zeros(n + q);
    for i in 0..n {
        th[i] = (1.0 - corr.nugget) * correlation(x, &row(points, i), corr);
    }
    th.rows_mut(n, q).copy_from(&basis.eval(x));
    let mean = th.dot(&sol);
    let c = 1.0 - th.dot(&lu.solve(&th).unwrap());
    Oracle { mean, variance: sigma_sq * c, beta: sol.rows(n, q).into_owned(), sigma_sq }
}

/// Spectral condition number of the correlation-plus-nugget matrix. Agreement to
/// 1e-8 is only meaningful when rounding amplified by this stays below it.
pub fn condition(points: &DMatrix<f64>, corr: &CorrelationSpec) -> f64 {
    let sv = correlation_matrix(points, corr).singular_values();
    sv.max() / sv.min()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
