//! Conjugate Gaussian-process fit under the reference prior `π(β, σ²) ∝ 1/σ²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::basis::{dependent_terms, BasisSpec};
use super::correlation::{correlation, correlation_matrix, CorrelationSpec};
use crate::error::{PbaError, Result};
use crate::linalg;

/// Ensemble of simulator runs with inputs normalized to the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    /// `n x r`, each coordinate in `[0, 1]`.
    pub points: DMatrix<f64>,
    /// `n x outputs`, one column per output index (depth).
    pub outputs: DMatrix<f64>,
}

impl Design {
    pub fn new(points: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(PbaError::Argument("design has no runs".into()));
        }
        if outputs.nrows() != points.nrows() {
            return Err(PbaError::Argument(format!(
                "{} design points but {} output rows",
                points.nrows(),
                outputs.nrows()
            )));
        }
        if let Some(v) = points.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PbaError::Argument(format!("normalized coordinate {v} outside [0, 1]")));
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(PbaError::Argument("non-finite simulator output".into()));
        }
        Ok(Self { points, outputs })
    }

    /// Normalizes raw inputs using the elicited `[lower, upper]` range of each input.
    pub fn from_raw(raw: &DMatrix<f64>, ranges: &[(f64, f64)], outputs: DMatrix<f64>) -> Result<Self> {
        if ranges.len() != raw.ncols() {
            return Err(PbaError::Argument(format!("{} ranges for {} inputs", ranges.len(), raw.ncols())));
        }
        let mut points = raw.clone();
        for (j, &(lo, hi)) in ranges.iter().enumerate() {
            if !(hi > lo) {
                return Err(PbaError::Argument(format!("input {} has empty range [{lo}, {hi}]", j + 1)));
            }
            for i in 0..raw.nrows() {
                points[(i, j)] = (raw[(i, j)] - lo) / (hi - lo);
            }
        }
        Self::new(points, outputs)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dims(&self) -> usize {
        self.points.ncols()
    }

    pub fn output(&self, k: usize) -> DVector<f64> {
        self.outputs.column(k).into_owned()
    }

    pub fn has_duplicate_rows(&self) -> bool {
        has_duplicate_rows(&self.points)
    }
}

pub fn has_duplicate_rows(points: &DMatrix<f64>) -> bool {
    let n = points.nrows();
    (0..n).any(|i| (0..i).any(|j| (points.row(i) - points.row(j)).amax() <= 1e-12))
}

/// Everything needed to rebuild an [`EmulatorPosterior`] bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorState {
    pub basis: BasisSpec,
    pub corr: CorrelationSpec,
    pub points: DMatrix<f64>,
    pub outputs: DVector<f64>,
}

/// A fitted emulator for one output. Immutable once built.
#[derive(Debug, Clone)]
pub struct EmulatorPosterior {
    pub basis: BasisSpec,
    pub corr: CorrelationSpec,
    pub beta_hat: DVector<f64>,
    pub sigma_hat_sq: f64,
    pub dof: usize,
    /// Lower Cholesky factor of the (possibly jittered) correlation-plus-nugget matrix.
    pub chol_l: DMatrix<f64>,
    pub jitter: f64,
    points: DMatrix<f64>,
    point_rows: Vec<Vec<f64>>,
    outputs: DVector<f64>,
    h: DMatrix<f64>,
    /// `A^{-1}(F - Hβ̂)`.
    resid_weights: DVector<f64>,
    /// `(H^T A^{-1} H)^{-1}`.
    gls_inv: DMatrix<f64>,
    /// `L^{-1} H`.
    l_inv_h: DMatrix<f64>,
}

struct Gls {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    jitter: f64,
    h: DMatrix<f64>,
    beta: DVector<f64>,
    quad: f64,
    gls: DMatrix<f64>,
    l_inv_h: DMatrix<f64>,
    resid_weights: DVector<f64>,
}

fn gls(points: &DMatrix<f64>, y: &DVector<f64>, basis: &BasisSpec, corr: &CorrelationSpec) -> Result<Gls> {
    let h = basis.matrix(points);
    let a = correlation_matrix(points, corr);
    let (chol, jitter) = linalg::cholesky_jittered(&a)?;
    let l_inv_h = chol.l().solve_lower_triangular(&h).ok_or_else(|| PbaError::Conditioning("triangular solve".into()))?;
    let l_inv_y = chol.l().solve_lower_triangular(y).ok_or_else(|| PbaError::Conditioning("triangular solve".into()))?;
    let gls = l_inv_h.transpose() * &l_inv_h;
    let gls_chol = nalgebra::Cholesky::new(gls.clone()).ok_or_else(|| PbaError::Collinearity {
        terms: {
            let d = dependent_terms(basis, points);
            if d.is_empty() { basis.labels() } else { d }
        },
    })?;
    let beta = gls_chol.solve(&(l_inv_h.transpose() * &l_inv_y));
    let resid = &l_inv_y - &l_inv_h * &beta;
    let quad = resid.norm_squared();
    let resid_weights = chol.l().transpose().solve_upper_triangular(&resid).ok_or_else(|| PbaError::Conditioning("triangular solve".into()))?;
    Ok(Gls {
        chol,
        jitter,
        h,
        beta,
        quad,
        gls,
        l_inv_h,
        resid_weights,
    })
}

pub fn fit_emulator(points: &DMatrix<f64>, y: &DVector<f64>, basis: &BasisSpec, corr: &CorrelationSpec) -> Result<EmulatorPosterior> {
    let n = points.nrows();
    let q = basis.len();
    if y.len() != n {
        return Err(PbaError::Argument(format!("{n} points but {} outputs", y.len())));
    }
    if corr.dims() != points.ncols() {
        return Err(PbaError::Argument(format!(
            "correlation has {} roughness values for {} inputs",
            corr.dims(),
            points.ncols()
        )));
    }
    if n <= q + 2 {
        return Err(PbaError::Fit(format!(
            "{n} runs and {q} basis terms leave {} degrees of freedom; more than 2 are needed for a proper predictive variance",
            n as i64 - q as i64
        )));
    }
    if corr.nugget == 0.0 && has_duplicate_rows(points) {
        return Err(PbaError::Argument("duplicate design rows require a positive nugget".into()));
    }
    let g = gls(points, y, basis, corr)?;
    let dof = n - q;
    let gls_inv = g
        .gls
        .clone()
        .try_inverse()
        .ok_or_else(|| PbaError::Collinearity { terms: dependent_terms(basis, points) })?;
    Ok(EmulatorPosterior {
        basis: basis.clone(),
        corr: corr.clone(),
        sigma_hat_sq: g.quad / (dof as f64 - 2.0),
        beta_hat: g.beta,
        dof,
        chol_l: g.chol.l(),
        jitter: g.jitter,
        point_rows: (0..n).map(|i| points.row(i).iter().copied().collect()).collect(),
        points: points.clone(),
        outputs: y.clone(),
        h: g.h,
        resid_weights: g.resid_weights,
        gls_inv,
        l_inv_h: g.l_inv_h,
    })
}

impl EmulatorPosterior {
    pub fn state(&self) -> EmulatorState {
        EmulatorState {
            basis: self.basis.clone(),
            corr: self.corr.clone(),
            points: self.points.clone(),
            outputs: self.outputs.clone(),
        }
    }

    pub fn from_state(state: &EmulatorState) -> Result<Self> {
        fit_emulator(&state.points, &state.outputs, &state.basis, &state.corr)
    }

    pub fn dims(&self) -> usize {
        self.points.ncols()
    }

    /// Predictive mean and variance of the simulator output at `x`. The variance is
    /// that of the Student-t predictive with `dof` degrees of freedom.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let w = 1.0 - self.corr.nugget;
        let t = DVector::from_iterator(self.point_rows.len(), self.point_rows.iter().map(|p| w * correlation(x, p, &self.corr)));
        let hx = self.basis.eval(x);
        let mean = hx.dot(&self.beta_hat) + t.dot(&self.resid_weights);
        let l_inv_t = self
            .chol_l
            .solve_lower_triangular(&t)
            .expect("Cholesky factor has a positive diagonal");
        let u = &hx - self.l_inv_h.transpose() * &l_inv_t;
        let c = 1.0 - l_inv_t.norm_squared() + (u.transpose() * &self.gls_inv * &u)[(0, 0)];
        (mean, self.sigma_hat_sq * c.max(0.0))
    }

    /// Predictive location, squared scale and degrees of freedom of the Student-t.
    pub fn predictive_t(&self, x: &[f64]) -> (f64, f64, f64) {
        let (m, v) = self.predict(x);
        let dof = self.dof as f64;
        (m, v * (dof - 2.0) / dof, dof)
    }

    pub fn design_basis_matrix(&self) -> &DMatrix<f64> {
        &self.h
    }
}

/// Log marginal likelihood of the outputs with `β` and `σ²` integrated out under
/// the reference prior:
///
/// ```text
/// -(n-q)/2 ln 2π - ½ ln|A| - ½ ln|HᵀA⁻¹H| + ln Γ((n-q)/2) - (n-q)/2 ln(Q/2)
/// ```
///
/// Returns `None` when the residual quadratic form `Q` vanishes (outputs inside
/// the basis span), where the likelihood carries no information about `(κ, ν)`.
pub fn log_marginal_likelihood(points: &DMatrix<f64>, y: &DVector<f64>, basis: &BasisSpec, corr: &CorrelationSpec) -> Result<Option<f64>> {
    let n = points.nrows();
    let q = basis.len();
    if n <= q {
        return Err(PbaError::Fit(format!("{n} runs for {q} basis terms")));
    }
    let g = gls(points, y, basis, corr)?;
    let scale = y.norm_squared().max(f64::MIN_POSITIVE);
    if g.quad <= 1e-12 * scale {
        return Ok(None);
    }
    let m = (n - q) as f64;
    let gls_chol = nalgebra::Cholesky::new(g.gls).ok_or_else(|| PbaError::Collinearity { terms: dependent_terms(basis, points) })?;
    let ll = -0.5 * m * (2.0 * std::f64::consts::PI).ln() - 0.5 * linalg::log_det_cholesky(&g.chol) - 0.5 * linalg::log_det_cholesky(&gls_chol)
        + ln_gamma(0.5 * m)
        - 0.5 * m * (0.5 * g.quad).ln();
    Ok(Some(ll))
}
