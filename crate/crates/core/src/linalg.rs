//! Small dense linear-algebra helpers shared by the adjustment and emulator code.

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{PbaError, Result};

/// Relative eigenvalue floor below which a matrix is declared indefinite.
pub const PSD_TOL: f64 = 1e-8;

/// Diagonal inflation factors tried, in order, when a Cholesky factorization fails.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Cyclic Jacobi eigendecomposition. Slower than the QR iteration in nalgebra but
/// accurate on matrices with clustered eigenvalues, where the latter can return
/// eigenvectors that do not reconstruct the input.
fn eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    let n = m.nrows();
    let mut a = symmetrize(m);
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.amax();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale || scale == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    SymmetricEigen { eigenvalues: a.diagonal(), eigenvectors: v }
}

/// Moore-Penrose inverse of a symmetric matrix. Eigenvalues whose magnitude is
/// below `rel_tol` times the largest magnitude are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = eigen(m);
    let largest = eig.eigenvalues.amax();
    let cutoff = rel_tol * largest;
    let mut inv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if largest == 0.0 || lambda.abs() <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / lambda;
    }
    inv
}

/// Checks positive semi-definiteness under the relative tolerance rule and returns
/// a repaired copy: eigenvalues in `[-PSD_TOL * max, 0)` are clamped to zero with a
/// warning, anything more negative is a hard error naming the eigenvalue.
pub fn repair_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let eig = eigen(m);
    let largest = eig.eigenvalues.max().max(0.0);
    let smallest = eig.eigenvalues.min();
    if smallest >= 0.0 {
        return Ok(symmetrize(m));
    }
    if smallest < -PSD_TOL * largest || largest == 0.0 {
        return Err(PbaError::Specification {
            what: what.to_string(),
            eigenvalue: smallest,
            largest,
        });
    }
    // rounding-level negatives are routine after products of projections
    if smallest < -1e-12 * largest {
        warn!("{what}: clamping negative eigenvalue {smallest:e} (largest {largest:e})");
    } else {
        debug!("{what}: clamping negative eigenvalue {smallest:e} (largest {largest:e})");
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&clamped) * v.transpose())
}

/// Unconditional PSD projection (negative eigenvalues set to zero), used for
/// moment estimates where finite-sample noise is expected.
pub fn clamp_psd(m: &DMatrix<f64>, what: &str) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = eigen(m);
    let smallest = eig.eigenvalues.min();
    if smallest >= 0.0 {
        return symmetrize(m);
    }
    warn!("{what}: clamping eigenvalue {smallest:e} to zero");
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&clamped) * v.transpose()
}

/// Cholesky factorization that walks the jitter ladder, inflating the diagonal
/// multiplicatively until the factorization succeeds. Returns the factor and the
/// jitter actually applied.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in JITTER_LADDER.iter() {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] *= 1.0 + jitter;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch, jitter));
        }
    }
    Err(PbaError::Conditioning(format!(
        "Cholesky failed on {}x{} matrix after jitter {:e}",
        a.nrows(),
        a.ncols(),
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

pub fn log_det_cholesky(ch: &Cholesky<f64, Dyn>) -> f64 {
    ch.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

pub fn dvec(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}
