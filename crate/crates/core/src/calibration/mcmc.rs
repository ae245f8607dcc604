//! Single-site random-walk Metropolis on an unconstrained parameter vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PbaError, Result};

/// Log density (up to a constant) on an unconstrained space.
pub trait LogTarget {
    fn dim(&self) -> usize;
    fn log_density(&self, theta: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> LogTarget for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density(&self, theta: &[f64]) -> f64 {
        (self.1)(theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Per-coordinate proposal standard deviations; empty selects defaults.
    #[serde(default)]
    pub proposal_scales: Vec<f64>,
    pub seed: u64,
    /// Tune proposal scales during the first half of burn-in, then freeze them.
    #[serde(default = "default_true")]
    pub adapt: bool,
}

fn default_true() -> bool {
    true
}

impl McmcConfig {
    /// Long settings used for the analyses of the observed data.
    pub fn full(seed: u64) -> Self {
        Self {
            n_samples: 21_000,
            burn_in: 1_000,
            thin: 20,
            proposal_scales: Vec::new(),
            seed,
            adapt: true,
        }
    }

    /// Short settings used inside sampling replicates.
    pub fn replicate(seed: u64) -> Self {
        Self {
            n_samples: 6_000,
            burn_in: 1_000,
            thin: 10,
            proposal_scales: Vec::new(),
            seed,
            adapt: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples <= self.burn_in {
            return Err(PbaError::Argument(format!(
                "n_samples {} must exceed burn_in {}",
                self.n_samples, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(PbaError::Argument("thin must be at least 1".into()));
        }
        if self.proposal_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(PbaError::Argument("proposal scales must be positive".into()));
        }
        Ok(())
    }

    pub fn retained_len(&self) -> usize {
        (self.n_samples - self.burn_in) / self.thin
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub log_densities: Vec<f64>,
    /// Fraction of post-burn-in single-site proposals accepted.
    pub acceptance_rate: f64,
    pub final_scales: Vec<f64>,
}

/// Log Metropolis ratio for a symmetric proposal.
pub fn log_acceptance_ratio<T: LogTarget + ?Sized>(target: &T, from: &[f64], to: &[f64]) -> f64 {
    target.log_density(to) - target.log_density(from)
}

const ADAPT_BATCH: usize = 50;

pub fn rw_metropolis<T: LogTarget + ?Sized>(target: &T, init: &[f64], default_scales: &[f64], cfg: &McmcConfig) -> Result<Chain> {
    cfg.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(PbaError::Argument(format!("initial state has {} coordinates, target has {dim}", init.len())));
    }
    let mut scales = if cfg.proposal_scales.is_empty() {
        default_scales.to_vec()
    } else {
        cfg.proposal_scales.clone()
    };
    if scales.len() != dim {
        return Err(PbaError::Argument(format!("{} proposal scales for {dim} coordinates", scales.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = init.to_vec();
    let mut lp = target.log_density(&state);
    if !lp.is_finite() {
        return Err(PbaError::Initialization(format!("log density {lp} at the initial state")));
    }

    let adapt_until = if cfg.adapt { cfg.burn_in / 2 } else { 0 };
    let mut batch_acc = vec![0usize; dim];
    let (mut total_acc, mut total_prop) = (0usize, 0usize);
    let mut all_acc = 0usize;
    let retained = cfg.retained_len();
    let mut samples = Vec::with_capacity(retained);
    let mut log_densities = Vec::with_capacity(retained);

    for it in 0..cfg.n_samples {
        for c in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            let old = state[c];
            state[c] = old + scales[c] * z;
            let cand = target.log_density(&state);
            let u: f64 = rng.random();
            let accept = cand.is_finite() && (cand >= lp || u.ln() < cand - lp);
            if accept {
                lp = cand;
                batch_acc[c] += 1;
            } else {
                state[c] = old;
            }
            all_acc += accept as usize;
            if it >= cfg.burn_in {
                total_prop += 1;
                total_acc += accept as usize;
            }
        }
        if it < adapt_until && (it + 1) % ADAPT_BATCH == 0 {
            for c in 0..dim {
                let rate = batch_acc[c] as f64 / ADAPT_BATCH as f64;
                if rate < 0.2 {
                    scales[c] *= 0.7;
                } else if rate > 0.4 {
                    scales[c] *= 1.4;
                }
                batch_acc[c] = 0;
            }
        }
        if it >= cfg.burn_in && (it + 1 - cfg.burn_in) % cfg.thin == 0 {
            samples.push(state.clone());
            log_densities.push(lp);
        }
    }
    if dim > 0 && all_acc == 0 {
        return Err(PbaError::Mixing(format!("no proposal accepted in {} iterations", cfg.n_samples)));
    }
    Ok(Chain {
        samples,
        log_densities,
        acceptance_rate: if total_prop == 0 { 0.0 } else { total_acc as f64 / total_prop as f64 },
        final_scales: scales,
    })
}

/// Monte Carlo standard error of a chain average by non-overlapping batch means.
pub fn batch_means_se(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 16 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        return (var / n as f64).sqrt();
    }
    let b = (n as f64).sqrt().floor() as usize;
    let nb = n / b;
    let means: Vec<f64> = (0..nb).map(|k| values[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let mm = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (nb as f64 - 1.0);
    (var / nb as f64).sqrt()
}
