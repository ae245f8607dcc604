use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::emulator::EmulatorPosterior;
use crate::error::{PbaError, Result};

/// Observations at a set of depths plus the held-out depth to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub observed_depths: Vec<f64>,
    pub z: Vec<f64>,
    pub held_out_depth: f64,
    /// Known observation error variance.
    pub sigma_e_sq: f64,
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        if self.observed_depths.is_empty() {
            return Err(PbaError::Argument("no observed depths".into()));
        }
        if self.observed_depths.len() != self.z.len() {
            return Err(PbaError::Argument(format!(
                "{} observed depths but {} observations",
                self.observed_depths.len(),
                self.z.len()
            )));
        }
        if !(self.sigma_e_sq >= 0.0) {
            return Err(PbaError::Argument(format!("observation variance {} is negative", self.sigma_e_sq)));
        }
        if self.observed_depths.iter().any(|&d| d == self.held_out_depth) {
            return Err(PbaError::Argument("held-out depth is also observed".into()));
        }
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(PbaError::Argument("non-finite observation".into()));
        }
        Ok(())
    }

    pub fn with_z(&self, z: Vec<f64>) -> Self {
        Self { z, ..self.clone() }
    }
}

/// Discrepancy variance tier. The inverse-gamma hyperparameters are divided by
/// the tier divisor, which keeps the prior mean of `σ_η²` roughly fixed while
/// widening and skewing the distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscrepancyTier {
    Standard,
    Medium,
    High,
}

impl DiscrepancyTier {
    pub fn divisor(self) -> f64 {
        match self {
            DiscrepancyTier::Standard => 1.0,
            DiscrepancyTier::Medium => 10.0,
            DiscrepancyTier::High => 100.0,
        }
    }
}

/// `ζ ~ Gamma(a_ζ, rate b_ζ)`, `σ_η² ~ InvGamma(a_η, b_η)` before the tier divisor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct DiscrepancyPrior {
    pub a_zeta: f64,
    pub b_zeta: f64,
    pub a_eta: f64,
    pub b_eta: f64,
    pub tier: DiscrepancyTier,
}

impl Default for DiscrepancyPrior {
    fn default() -> Self {
        Self {
            a_zeta: 1.0,
            b_zeta: 7.0,
            a_eta: 1000.0,
            b_eta: 6.8,
            tier: DiscrepancyTier::Standard,
        }
    }
}

impl DiscrepancyPrior {
    pub fn with_tier(self, tier: DiscrepancyTier) -> Self {
        Self { tier, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a_zeta", self.a_zeta), ("b_zeta", self.b_zeta), ("a_eta", self.a_eta), ("b_eta", self.b_eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PbaError::Argument(format!("discrepancy prior {name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Inverse-gamma parameters after applying the tier.
    pub fn eta_params(&self) -> (f64, f64) {
        let d = self.tier.divisor();
        (self.a_eta / d, self.b_eta / d)
    }

    pub fn ln_pdf_sigma_eta_sq(&self, s: f64) -> f64 {
        if !(s > 0.0) {
            return f64::NEG_INFINITY;
        }
        let (a, b) = self.eta_params();
        a * b.ln() - ln_gamma(a) - (a + 1.0) * s.ln() - b / s
    }

    pub fn ln_pdf_zeta(&self, z: f64) -> f64 {
        if !(z > 0.0) {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.a_zeta, self.b_zeta);
        a * b.ln() - ln_gamma(a) + (a - 1.0) * z.ln() - b * z
    }

    /// Prior mean of `σ_η²` (mode when the mean is undefined).
    pub fn sigma_eta_sq_center(&self) -> f64 {
        let (a, b) = self.eta_params();
        if a > 1.0 { b / (a - 1.0) } else { b / (a + 1.0) }
    }

    pub fn zeta_mean(&self) -> f64 {
        self.a_zeta / self.b_zeta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    /// Best input in normalized coordinates.
    pub x_star: Vec<f64>,
    pub sigma_eta_sq: f64,
    pub zeta: f64,
}

/// Parameters held fixed instead of sampled. Pinned values are exempt from
/// their prior, so boundary values such as `σ_η² = 0` or `ζ = ∞` are allowed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pins {
    pub x_star: Option<Vec<f64>>,
    pub sigma_eta_sq: Option<f64>,
    pub zeta: Option<f64>,
}

/// Discrepancy correlation `exp(-ζ Δ²)`, equal to one at zero separation for any `ζ`.
pub fn depth_correlation(zeta: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        1.0
    } else {
        (-zeta * delta * delta).exp()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EmulatorPredictions {
    pub means: DVector<f64>,
    pub vars: DVector<f64>,
}

/// Calibration posterior for one judgement set: emulators at the observed depths
/// (and the held-out depth), observations and discrepancy prior.
pub struct CalibrationModel<'a> {
    pub observed: Vec<&'a EmulatorPosterior>,
    pub held_out: &'a EmulatorPosterior,
    pub data: &'a ObservationModel,
    pub prior: DiscrepancyPrior,
    pub pins: Pins,
    cache: RefCell<Vec<(Vec<f64>, EmulatorPredictions)>>,
}

impl<'a> CalibrationModel<'a> {
    pub fn new(
        observed: Vec<&'a EmulatorPosterior>,
        held_out: &'a EmulatorPosterior,
        data: &'a ObservationModel,
        prior: DiscrepancyPrior,
        pins: Pins,
    ) -> Result<Self> {
        data.validate()?;
        prior.validate()?;
        if observed.len() != data.observed_depths.len() {
            return Err(PbaError::Argument(format!(
                "{} emulators for {} observed depths",
                observed.len(),
                data.observed_depths.len()
            )));
        }
        let r = held_out.dims();
        if observed.iter().any(|e| e.dims() != r) {
            return Err(PbaError::Argument("emulators disagree on input dimension".into()));
        }
        if let Some(x) = &pins.x_star {
            if x.len() != r || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(PbaError::Argument("pinned best input outside the unit cube".into()));
            }
        }
        Ok(Self {
            observed,
            held_out,
            data,
            prior,
            pins,
            cache: RefCell::new(Vec::with_capacity(2)),
        })
    }

    pub fn input_dims(&self) -> usize {
        self.held_out.dims()
    }

    /// Emulator means and variances at the observed depths, memoized over the
    /// two most recent inputs (single-site updates of the discrepancy
    /// hyperparameters revisit the current input).
    pub(crate) fn predictions(&self, x: &[f64]) -> EmulatorPredictions {
        if let Some((_, p)) = self.cache.borrow().iter().find(|(k, _)| k.as_slice() == x) {
            return p.clone();
        }
        let n = self.observed.len();
        let mut means = DVector::zeros(n);
        let mut vars = DVector::zeros(n);
        for (i, e) in self.observed.iter().enumerate() {
            let (m, v) = e.predict(x);
            means[i] = m;
            vars[i] = v;
        }
        let p = EmulatorPredictions { means, vars };
        let mut cache = self.cache.borrow_mut();
        if cache.len() == 2 {
            cache.remove(0);
        }
        cache.push((x.to_vec(), p.clone()));
        p
    }

    /// Covariance of `z` given the state: emulator variances, discrepancy and observation error.
    pub(crate) fn data_covariance(&self, preds: &EmulatorPredictions, sigma_eta_sq: f64, zeta: f64) -> DMatrix<f64> {
        let d = &self.data.observed_depths;
        let n = d.len();
        DMatrix::from_fn(n, n, |i, j| {
            let mut v = sigma_eta_sq * depth_correlation(zeta, d[i] - d[j]);
            if i == j {
                v += preds.vars[i] + self.data.sigma_e_sq;
            }
            v
        })
    }

    /// Log posterior density (up to a constant) of a state: multivariate normal
    /// likelihood of `z` plus the log priors of unpinned parameters. `-inf`
    /// outside the support or when the covariance is not positive definite.
    pub fn log_posterior(&self, state: &CalibrationState) -> f64 {
        if state.x_star.len() != self.input_dims() || state.x_star.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        if self.pins.sigma_eta_sq.is_none() {
            lp += self.prior.ln_pdf_sigma_eta_sq(state.sigma_eta_sq);
        } else if !(state.sigma_eta_sq >= 0.0) {
            return f64::NEG_INFINITY;
        }
        if self.pins.zeta.is_none() {
            lp += self.prior.ln_pdf_zeta(state.zeta);
        } else if !(state.zeta >= 0.0) {
            return f64::NEG_INFINITY;
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let preds = self.predictions(&state.x_star);
        let k = self.data_covariance(&preds, state.sigma_eta_sq, state.zeta);
        let Some(ch) = nalgebra::Cholesky::new(k) else {
            return f64::NEG_INFINITY;
        };
        let resid = DVector::from_column_slice(&self.data.z) - &preds.means;
        let Some(w) = ch.l().solve_lower_triangular(&resid) else {
            return f64::NEG_INFINITY;
        };
        let n = resid.len() as f64;
        let log_det: f64 = ch.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        lp + -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + w.norm_squared())
    }
}
