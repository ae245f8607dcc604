use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mcmc::{batch_means_se, rw_metropolis, Chain, LogTarget, McmcConfig};
use super::model::{depth_correlation, CalibrationModel, CalibrationState};
use crate::error::{PbaError, Result};

/// Posterior summary of the held-out prediction for one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PosteriorSummary {
    pub expectation: f64,
    pub variance: f64,
    pub mcse: f64,
    pub acceptance_rate: f64,
    pub n_retained: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutPrediction {
    pub summary: PosteriorSummary,
    /// Conditional mean of the held-out value for each retained state (`NaN` where skipped).
    pub conditional_means: Vec<f64>,
    pub conditional_vars: Vec<f64>,
    pub skipped: usize,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// The calibration posterior on unconstrained coordinates: logit for each free
/// best-input coordinate, log for `σ_η²` and `ζ`, Jacobians included.
pub struct CalibrationTarget<'m, 'a> {
    pub model: &'m CalibrationModel<'a>,
}

impl CalibrationTarget<'_, '_> {
    fn free_x(&self) -> usize {
        if self.model.pins.x_star.is_some() { 0 } else { self.model.input_dims() }
    }

    pub fn decode(&self, theta: &[f64]) -> CalibrationState {
        let pins = &self.model.pins;
        let nx = self.free_x();
        let x_star = match &pins.x_star {
            Some(x) => x.clone(),
            None => theta[..nx].iter().map(|&u| expit(u)).collect(),
        };
        let mut k = nx;
        let sigma_eta_sq = pins.sigma_eta_sq.unwrap_or_else(|| {
            k += 1;
            theta[k - 1].exp()
        });
        let zeta = pins.zeta.unwrap_or_else(|| {
            k += 1;
            theta[k - 1].exp()
        });
        CalibrationState { x_star, sigma_eta_sq, zeta }
    }

    pub fn encode(&self, state: &CalibrationState) -> Vec<f64> {
        let pins = &self.model.pins;
        let mut theta = Vec::new();
        if pins.x_star.is_none() {
            theta.extend(state.x_star.iter().map(|&x| logit(x.clamp(1e-12, 1.0 - 1e-12))));
        }
        if pins.sigma_eta_sq.is_none() {
            theta.push(state.sigma_eta_sq.ln());
        }
        if pins.zeta.is_none() {
            theta.push(state.zeta.ln());
        }
        theta
    }

    pub fn default_scales(&self) -> Vec<f64> {
        let mut s = vec![0.5; self.free_x()];
        if self.model.pins.sigma_eta_sq.is_none() {
            s.push(0.3);
        }
        if self.model.pins.zeta.is_none() {
            s.push(0.5);
        }
        s
    }

    pub fn initial_state(&self) -> CalibrationState {
        let pins = &self.model.pins;
        CalibrationState {
            x_star: pins.x_star.clone().unwrap_or_else(|| vec![0.5; self.model.input_dims()]),
            sigma_eta_sq: pins.sigma_eta_sq.unwrap_or_else(|| self.model.prior.sigma_eta_sq_center()),
            zeta: pins.zeta.unwrap_or_else(|| self.model.prior.zeta_mean()),
        }
    }
}

impl LogTarget for CalibrationTarget<'_, '_> {
    fn dim(&self) -> usize {
        self.default_scales().len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        if theta.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let state = self.decode(theta);
        let mut jac = 0.0;
        let nx = self.free_x();
        for &x in &state.x_star[..nx.min(state.x_star.len())] {
            if !(x > 0.0 && x < 1.0) {
                return f64::NEG_INFINITY;
            }
            jac += x.ln() + (1.0 - x).ln();
        }
        jac += theta[nx..].iter().sum::<f64>();
        let lp = self.model.log_posterior(&state);
        if lp.is_finite() { lp + jac } else { f64::NEG_INFINITY }
    }
}

/// Samples the calibration posterior and returns the retained states with the raw chain.
pub fn sample_calibration(model: &CalibrationModel<'_>, cfg: &McmcConfig) -> Result<(Vec<CalibrationState>, Chain)> {
    let target = CalibrationTarget { model };
    let init = target.encode(&target.initial_state());
    let chain = if target.dim() == 0 {
        // everything pinned: the chain is the single pinned state repeated
        let n = cfg.retained_len();
        Chain {
            samples: vec![Vec::new(); n],
            log_densities: vec![target.log_density(&[]); n],
            acceptance_rate: 1.0,
            final_scales: Vec::new(),
        }
    } else {
        rw_metropolis(&target, &init, &target.default_scales(), cfg)?
    };
    let states = chain.samples.iter().map(|t| target.decode(t)).collect();
    Ok((states, chain))
}

/// Conditional mean and variance of the held-out value for one state:
/// emulator prediction plus the discrepancy conditioned on the residuals at the
/// observed depths.
pub fn held_out_conditional(model: &CalibrationModel<'_>, state: &CalibrationState) -> Option<(f64, f64)> {
    let preds = model.predictions(&state.x_star);
    let k = model.data_covariance(&preds, state.sigma_eta_sq, state.zeta);
    let ch = nalgebra::Cholesky::new(k)?;
    let (m5, v5) = model.held_out.predict(&state.x_star);
    let d5 = model.data.held_out_depth;
    let c = DVector::from_iterator(
        model.data.observed_depths.len(),
        model.data.observed_depths.iter().map(|&d| state.sigma_eta_sq * depth_correlation(state.zeta, d5 - d)),
    );
    let resid = DVector::from_column_slice(&model.data.z) - &preds.means;
    let w = ch.solve(&resid);
    let mean = m5 + c.dot(&w);
    let l_inv_c = ch.l().solve_lower_triangular(&c)?;
    let var = v5 + state.sigma_eta_sq - l_inv_c.norm_squared();
    (mean.is_finite() && var.is_finite()).then_some((mean, var.max(0.0)))
}

/// Chain-averaged held-out conditional mean with its total posterior variance
/// and batch-means Monte Carlo standard error.
pub fn predict_held_out(model: &CalibrationModel<'_>, states: &[CalibrationState], acceptance_rate: f64) -> Result<HeldOutPrediction> {
    if states.is_empty() {
        return Err(PbaError::Argument("empty chain".into()));
    }
    let mut means = Vec::with_capacity(states.len());
    let mut vars = Vec::with_capacity(states.len());
    let mut skipped = 0usize;
    for s in states {
        match held_out_conditional(model, s) {
            Some((m, v)) => {
                means.push(m);
                vars.push(v);
            }
            None => {
                skipped += 1;
                means.push(f64::NAN);
                vars.push(f64::NAN);
            }
        }
    }
    if skipped > 0 {
        warn!("held-out prediction skipped {skipped} of {} states", states.len());
    }
    if skipped * 10 > states.len() {
        return Err(PbaError::Conditioning(format!(
            "held-out prediction failed on {skipped} of {} states",
            states.len()
        )));
    }
    let good: Vec<f64> = means.iter().copied().filter(|v| v.is_finite()).collect();
    let good_vars: Vec<f64> = vars.iter().copied().filter(|v| v.is_finite()).collect();
    let n = good.len() as f64;
    let expectation = good.iter().sum::<f64>() / n;
    let between = if good.len() > 1 {
        good.iter().map(|m| (m - expectation).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let within = good_vars.iter().sum::<f64>() / n;
    let mcse = if good.len() > 1 { batch_means_se(&good) } else { 0.0 };
    Ok(HeldOutPrediction {
        summary: PosteriorSummary {
            expectation,
            variance: within + between,
            mcse,
            acceptance_rate,
            n_retained: states.len(),
        },
        conditional_means: means,
        conditional_vars: vars,
        skipped,
    })
}

/// Dense covariance helper shared with tests of the conditional formula.
pub fn discrepancy_covariance(depths: &[f64], sigma_eta_sq: f64, zeta: f64) -> DMatrix<f64> {
    let n = depths.len();
    DMatrix::from_fn(n, n, |i, j| sigma_eta_sq * depth_correlation(zeta, depths[i] - depths[j]))
}
