use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PbaError, Result};

/// Second-order moments of `(y, G)` estimated from replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MomentEstimates {
    pub e_y: DVector<f64>,
    pub var_y: DMatrix<f64>,
    pub e_g: DVector<f64>,
    pub var_g: DMatrix<f64>,
    /// `Cov[y, G]`, `dim(y) x dim(G)`.
    pub cov_y_g: DMatrix<f64>,
    /// Standard error of each entry of `E[G]`.
    pub e_g_se: DVector<f64>,
    /// Standard error of each entry of `Cov[y, G]`.
    pub cov_y_g_se: DMatrix<f64>,
    pub replicates: usize,
    /// `Var[G]` is identically zero.
    pub degenerate: bool,
}

fn normalized_weights(n: usize, weights: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
    let Some(w) = weights else { return Ok(None) };
    if w.len() != n {
        return Err(PbaError::Estimation(format!("{} weights for {n} replicates", w.len())));
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(PbaError::Estimation("weights must be finite and non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(PbaError::Estimation("weights sum to zero".into()));
    }
    Ok(Some(w.iter().map(|v| v / total).collect()))
}

/// Weighted mean and covariance; with weights normalized to one the covariance
/// uses the `1 - Σw²` correction, which reduces to `n - 1` for equal weights.
fn mean_cov(xs: &[DVector<f64>], ys: &[DVector<f64>], w: Option<&[f64]>) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let n = xs.len();
    let (mx, my) = match w {
        None => (
            xs.iter().fold(DVector::zeros(xs[0].len()), |a, x| a + x) / n as f64,
            ys.iter().fold(DVector::zeros(ys[0].len()), |a, y| a + y) / n as f64,
        ),
        Some(w) => (
            xs.iter().zip(w).fold(DVector::zeros(xs[0].len()), |a, (x, &wi)| a + x * wi),
            ys.iter().zip(w).fold(DVector::zeros(ys[0].len()), |a, (y, &wi)| a + y * wi),
        ),
    };
    let mut c = DMatrix::zeros(mx.len(), my.len());
    match w {
        None => {
            for (x, y) in xs.iter().zip(ys) {
                c += (x - &mx) * (y - &my).transpose();
            }
            c /= n as f64 - 1.0;
        }
        Some(w) => {
            for ((x, y), &wi) in xs.iter().zip(ys).zip(w) {
                c += (x - &mx) * (y - &my).transpose() * wi;
            }
            let denom = 1.0 - w.iter().map(|v| v * v).sum::<f64>();
            c /= denom;
        }
    }
    (mx, my, c)
}

fn cov_se(xs: &[DVector<f64>], ys: &[DVector<f64>], mx: &DVector<f64>, my: &DVector<f64>) -> DMatrix<f64> {
    let n = xs.len() as f64;
    DMatrix::from_fn(mx.len(), my.len(), |a, b| {
        let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x[a] - mx[a]) * (y[b] - my[b])).collect();
        let m = prods.iter().sum::<f64>() / n;
        (prods.iter().map(|q| (q - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    })
}

/// Sample (optionally re-weighted) moments of paired `(y, G)` replicates.
pub fn estimate_moments(ys: &[DVector<f64>], gs: &[DVector<f64>], weights: Option<&[f64]>) -> Result<MomentEstimates> {
    let n = ys.len();
    if n < 2 || gs.len() != n {
        return Err(PbaError::Estimation(format!(
            "{n} y replicates and {} G replicates; at least 2 paired replicates are required",
            gs.len()
        )));
    }
    let w = normalized_weights(n, weights)?;
    let w = w.as_deref();
    let (e_y, _, var_y) = mean_cov(ys, ys, w);
    let (e_g, _, var_g) = mean_cov(gs, gs, w);
    let (_, _, cov_y_g) = mean_cov(ys, gs, w);
    let e_g_se = DVector::from_iterator(e_g.len(), (0..e_g.len()).map(|i| (var_g[(i, i)].max(0.0) / n as f64).sqrt()));
    let cov_y_g_se = cov_se(ys, gs, &e_y, &e_g);
    let degenerate = var_g.iter().all(|&v| v == 0.0);
    if degenerate {
        warn!("Var[G] is identically zero across {n} replicates");
    }
    Ok(MomentEstimates {
        e_y,
        var_y,
        e_g,
        var_g,
        cov_y_g,
        e_g_se,
        cov_y_g_se,
        replicates: n,
        degenerate,
    })
}
