//! Hyperpriors on the residual process and MAP search for `(κ, ν)` by simulated annealing.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::basis::BasisSpec;
use super::correlation::{half_length_to_kappa, kappa_to_half_length, CorrelationFamily, CorrelationSpec};
use super::fit::{has_duplicate_rows, log_marginal_likelihood};
use crate::error::{PbaError, Result};

/// Half of the normalized input range; half-length correlations are taken at this distance.
pub const HALF_RANGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(PbaError::Argument(format!("Beta({a}, {b}) parameters must be positive")));
        }
        Ok(Self { a, b })
    }

    /// Same mean, both parameters multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { a: self.a * s, b: self.b * s }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0 && x < 1.0) {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (1.0 - x).ln() - ln_beta(self.a, self.b)
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// Interior mode when both parameters exceed one, otherwise the mean.
    pub fn mode(&self) -> f64 {
        if self.a > 1.0 && self.b > 1.0 {
            (self.a - 1.0) / (self.a + self.b - 2.0)
        } else {
            self.mean()
        }
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Nugget prior chosen by the R² of the final OLS fit. Brackets are left-closed:
/// the first scenario whose `r2_lower` is at most the observed R² applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuggetScenario {
    pub r2_lower: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NuggetScenarioTable(pub Vec<NuggetScenario>);

impl Default for NuggetScenarioTable {
    fn default() -> Self {
        let rows = [
            (0.95, 3.8, 1.7),
            (0.9, 2.3, 1.7),
            (0.8, 2.0, 1.5),
            (0.7, 1.5, 1.5),
            (0.6, 1.6, 2.1),
            (0.4, 1.8, 3.8),
            (0.0, 1.4, 3.1),
        ];
        Self(rows.iter().map(|&(r2_lower, a, b)| NuggetScenario { r2_lower, a, b }).collect())
    }
}

impl NuggetScenarioTable {
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(PbaError::Argument("empty nugget scenario table".into()));
        }
        for w in self.0.windows(2) {
            if w[1].r2_lower >= w[0].r2_lower {
                return Err(PbaError::Argument("nugget scenarios must have decreasing R² lower bounds".into()));
            }
        }
        for s in &self.0 {
            BetaPrior::new(s.a, s.b)?;
        }
        if self.0.last().map(|s| s.r2_lower) != Some(0.0) {
            return Err(PbaError::Argument("last nugget scenario must start at R² = 0".into()));
        }
        Ok(())
    }

    pub fn lookup(&self, r2: f64) -> BetaPrior {
        let s = self
            .0
            .iter()
            .find(|s| r2 >= s.r2_lower)
            .unwrap_or_else(|| self.0.last().expect("validated table is non-empty"));
        BetaPrior { a: s.a, b: s.b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    /// Beta prior on the half-length correlation of each input.
    pub kappa_beta: Vec<BetaPrior>,
    pub nu_beta: BetaPrior,
}

/// `ln p(F | κ, ν)` under the reference prior plus the Beta log densities of the
/// half-length correlations and the nugget. Returns `-inf` when the correlation
/// matrix cannot be factorized or the nugget vanishes on a design with repeated
/// rows. When the outputs lie inside the basis span the likelihood is flat and
/// only the prior terms remain.
pub fn log_marginal_posterior(
    kappa: &[f64],
    nu: f64,
    family: CorrelationFamily,
    points: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &BasisSpec,
    priors: &HyperPriors,
) -> f64 {
    if kappa.len() != priors.kappa_beta.len() || !(nu > 0.0 && nu < 1.0) || kappa.iter().any(|k| !(*k > 0.0)) {
        return f64::NEG_INFINITY;
    }
    if nu < 1e-8 && has_duplicate_rows(points) {
        return f64::NEG_INFINITY;
    }
    let prior: f64 = kappa
        .iter()
        .zip(&priors.kappa_beta)
        .map(|(&k, b)| b.ln_pdf(kappa_to_half_length(k, family, HALF_RANGE)))
        .sum::<f64>()
        + priors.nu_beta.ln_pdf(nu);
    if !prior.is_finite() {
        return f64::NEG_INFINITY;
    }
    let Ok(corr) = CorrelationSpec::new(family, kappa.to_vec(), nu) else {
        return f64::NEG_INFINITY;
    };
    match log_marginal_likelihood(points, y, basis, &corr) {
        Ok(Some(ll)) if ll.is_finite() => ll + prior,
        Ok(Some(_)) => f64::NEG_INFINITY,
        Ok(None) => prior,
        Err(_) => f64::NEG_INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct AnnealConfig {
    pub iterations: usize,
    /// Geometric cooling ratio applied every iteration.
    pub cooling: f64,
    /// Fraction of worsening moves accepted at the start; sets the initial temperature.
    pub initial_acceptance: f64,
    /// Proposal standard deviation on the logit scale at the initial temperature.
    pub step: f64,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            cooling: 0.995,
            initial_acceptance: 0.6,
            step: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEstimate {
    pub kappa: Vec<f64>,
    pub nu: f64,
    pub half_lengths: Vec<f64>,
    pub log_posterior: f64,
    pub start_log_posterior: f64,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Maximizes [`log_marginal_posterior`] over half-length correlations and the
/// nugget, searching on the logit scale. Starts from the prior modes and never
/// returns a point worse than the start.
pub fn map_hyperparameters(
    points: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &BasisSpec,
    family: CorrelationFamily,
    priors: &HyperPriors,
    cfg: &AnnealConfig,
) -> Result<MapEstimate> {
    let r = points.ncols();
    if priors.kappa_beta.len() != r {
        return Err(PbaError::Argument(format!("{} roughness priors for {r} inputs", priors.kappa_beta.len())));
    }
    let decode = |u: &[f64]| -> Option<(Vec<f64>, f64)> {
        let kappa = u[..r]
            .iter()
            .map(|&v| half_length_to_kappa(expit(v).clamp(1e-12, 1.0 - 1e-12), family, HALF_RANGE).ok())
            .collect::<Option<Vec<f64>>>()?;
        Some((kappa, expit(u[r])))
    };
    let objective = |u: &[f64]| -> f64 {
        match decode(u) {
            Some((kappa, nu)) => log_marginal_posterior(&kappa, nu, family, points, y, basis, priors),
            None => f64::NEG_INFINITY,
        }
    };

    let clamp_mode = |b: &BetaPrior| b.mode().clamp(1e-3, 1.0 - 1e-3);
    let start: Vec<f64> = priors
        .kappa_beta
        .iter()
        .map(|b| logit(clamp_mode(b)))
        .chain(std::iter::once(logit(clamp_mode(&priors.nu_beta))))
        .collect();
    let f_start = objective(&start);
    if !f_start.is_finite() {
        return Err(PbaError::Initialization(format!("log posterior {f_start} at the prior mode")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = start.len();
    let propose = |from: &[f64], step: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        from.iter()
            .map(|&v| {
                let z: f64 = rng.sample(StandardNormal);
                (v + step * z).clamp(-25.0, 25.0)
            })
            .collect()
    };

    // initial temperature: accept `initial_acceptance` of the average worsening move
    let mut worse = Vec::new();
    for _ in 0..(10 * dim).max(20) {
        let cand = propose(&start, cfg.step, &mut rng);
        let d = objective(&cand) - f_start;
        if d.is_finite() && d < 0.0 {
            worse.push(-d);
        }
    }
    let mut temp = if worse.is_empty() {
        1.0
    } else {
        let mean = worse.iter().sum::<f64>() / worse.len() as f64;
        mean / -cfg.initial_acceptance.clamp(1e-6, 1.0 - 1e-6).ln()
    };
    let t0 = temp;

    let (mut cur, mut f_cur) = (start.clone(), f_start);
    let (mut best, mut f_best) = (start.clone(), f_start);
    for _ in 0..cfg.iterations {
        let step = cfg.step * (temp / t0).sqrt().max(0.05);
        let cand = propose(&cur, step, &mut rng);
        let f_cand = objective(&cand);
        let u: f64 = rng.random();
        if f_cand.is_finite() && (f_cand >= f_cur || u < ((f_cand - f_cur) / temp).exp()) {
            cur = cand;
            f_cur = f_cand;
            if f_cur > f_best {
                best = cur.clone();
                f_best = f_cur;
            }
        }
        temp *= cfg.cooling;
    }

    let (kappa, nu) = decode(&best).ok_or_else(|| PbaError::Initialization("best point does not decode".into()))?;
    Ok(MapEstimate {
        half_lengths: kappa.iter().map(|&k| kappa_to_half_length(k, family, HALF_RANGE)).collect(),
        kappa,
        nu,
        log_posterior: f_best,
        start_log_posterior: f_start,
    })
}
