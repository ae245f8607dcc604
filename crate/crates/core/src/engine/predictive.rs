use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::calibration::{depth_correlation, DiscrepancyPrior, EmulatorBundle, ObservationModel};
use crate::error::{PbaError, Result};
use crate::linalg;
use crate::rng::stream;

/// One emulator bundle (covering every depth) with the discrepancy prior of its
/// judgement set, tier already applied.
#[derive(Debug, Clone)]
pub struct PredictiveSource {
    pub bundle: Arc<EmulatorBundle>,
    pub prior: DiscrepancyPrior,
}

#[derive(Debug, Clone)]
pub enum YSampler {
    /// Multivariate normal with elicited moments over all depths.
    Direct { mean: DVector<f64>, variance: DMatrix<f64> },
    /// Pick a judgement set at random, draw a best input uniformly, draw the
    /// simulator output from its emulators and add a discrepancy draw.
    Judgement { sources: Vec<PredictiveSource> },
}

/// Generator of `(ŷ, ẑ)` pairs: `ŷ` over every depth, `ẑ = ŷ + e` on the observed depths.
#[derive(Debug, Clone)]
pub struct PriorPredictive {
    pub depths: Vec<f64>,
    pub held_out: usize,
    pub sigma_e_sq: f64,
    pub sampler: YSampler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDraw {
    /// `ŷ` at every depth.
    pub y: Vec<f64>,
    /// `ẑ` at the observed depths.
    pub z: Vec<f64>,
}

impl ReplicateDraw {
    pub fn y_held_out(&self, pp: &PriorPredictive) -> f64 {
        self.y[pp.held_out]
    }
}

impl PriorPredictive {
    pub fn validate(&self) -> Result<()> {
        let n = self.depths.len();
        if n < 2 || self.held_out >= n {
            return Err(PbaError::Argument("prior predictive needs two or more depths and a valid held-out index".into()));
        }
        if !(self.sigma_e_sq >= 0.0) {
            return Err(PbaError::Argument("observation variance must be non-negative".into()));
        }
        match &self.sampler {
            YSampler::Direct { mean, variance } => {
                if mean.len() != n || variance.shape() != (n, n) {
                    return Err(PbaError::Argument("direct prior moments do not match the depths".into()));
                }
            }
            YSampler::Judgement { sources } => {
                if sources.is_empty() {
                    return Err(PbaError::Argument("no judgement sets to sample from".into()));
                }
                if sources.iter().any(|s| s.bundle.depths != self.depths) {
                    return Err(PbaError::Argument("emulator bundle does not cover the prior predictive depths".into()));
                }
            }
        }
        Ok(())
    }

    pub fn observed_depths(&self) -> Vec<f64> {
        self.depths.iter().enumerate().filter(|(i, _)| *i != self.held_out).map(|(_, &d)| d).collect()
    }

    /// Observation model for a sampled (or real) data vector.
    pub fn observation_model(&self, z: Vec<f64>) -> ObservationModel {
        ObservationModel {
            observed_depths: self.observed_depths(),
            z,
            held_out_depth: self.depths[self.held_out],
            sigma_e_sq: self.sigma_e_sq,
        }
    }

    fn draw_y(&self, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        match &self.sampler {
            YSampler::Direct { mean, variance } => {
                let (ch, _) = linalg::cholesky_jittered(&linalg::clamp_psd(variance, "prior variance of y"))?;
                let e = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
                Ok(mean + ch.l() * e)
            }
            YSampler::Judgement { sources } => {
                let src = sources.choose(rng).expect("validated non-empty");
                let r = src.bundle.emulators[0].dims();
                let x: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
                let mut y = DVector::zeros(self.depths.len());
                for (k, em) in src.bundle.emulators.iter().enumerate() {
                    let (loc, scale_sq, dof) = em.predictive_t(&x);
                    let t: f64 = StudentT::new(dof).map_err(|e| PbaError::Argument(e.to_string()))?.sample(rng);
                    y[k] = loc + scale_sq.sqrt() * t;
                }
                let (a, b) = src.prior.eta_params();
                let g: f64 = Gamma::new(a, 1.0 / b).map_err(|e| PbaError::Argument(e.to_string()))?.sample(rng);
                let sigma_eta_sq = 1.0 / g;
                let zeta: f64 = Gamma::new(src.prior.a_zeta, 1.0 / src.prior.b_zeta)
                    .map_err(|e| PbaError::Argument(e.to_string()))?
                    .sample(rng);
                let d = &self.depths;
                let cov = DMatrix::from_fn(d.len(), d.len(), |i, j| sigma_eta_sq * depth_correlation(zeta, d[i] - d[j]));
                let (ch, _) = linalg::cholesky_jittered(&cov)?;
                let e = DVector::from_iterator(d.len(), (0..d.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
                Ok(y + ch.l() * e)
            }
        }
    }
}

/// Draws `(ŷ, ẑ)` from the stream keyed by `seed`.
pub fn sample_replicate(pp: &PriorPredictive, seed: u64) -> Result<ReplicateDraw> {
    pp.validate()?;
    let mut rng = stream(seed, &[0x5A3F]);
    let y = pp.draw_y(&mut rng)?;
    let noise = Normal::new(0.0, pp.sigma_e_sq.sqrt()).map_err(|e| PbaError::Argument(e.to_string()))?;
    let z = (0..y.len())
        .filter(|&i| i != pp.held_out)
        .map(|i| if pp.sigma_e_sq == 0.0 { y[i] } else { y[i] + noise.sample(&mut rng) })
        .collect();
    Ok(ReplicateDraw { y: y.iter().copied().collect(), z })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(sigma_e_sq: f64) -> PriorPredictive {
        PriorPredictive {
            depths: vec![0.0, 1.0, 2.0],
            held_out: 2,
            sigma_e_sq,
            sampler: YSampler::Direct {
                mean: DVector::from_vec(vec![1.0, 2.0, 3.0]),
                variance: DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 2.0, 0.3, 0.2, 0.3, 0.5]),
            },
        }
    }

    #[test]
    fn noiseless_z_equals_y() {
        let d = sample_replicate(&direct(0.0), 3).unwrap();
        assert_eq!(d.z, vec![d.y[0], d.y[1]]);
        assert_eq!(d, sample_replicate(&direct(0.0), 3).unwrap());
    }
}
