//! A calibration whose held-out posterior mean has a closed form.

use nalgebra::{DMatrix, DVector};
use pba_core::calibration::{CalibrationModel, DiscrepancyPrior, ObservationModel, Pins};
use pba_core::emulator::{fit_emulator, BasisSpec, CorrelationFamily, CorrelationSpec, EmulatorPosterior};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Exactly linear emulators `a_d + b_d x` on a 1-D input, one per depth. Their
/// predictive variance is zero to rounding.
pub fn linear_emulators(a: &[f64], b: &[f64]) -> Vec<EmulatorPosterior> {
    let pts = [0.05, 0.2, 0.4, 0.55, 0.75, 0.95];
    let points = DMatrix::from_column_slice(pts.len(), 1, &pts);
    let corr = CorrelationSpec::new(CorrelationFamily::gaussian(), vec![2.0], 0.0).unwrap();
    a.iter()
        .zip(b)
        .map(|(&ai, &bi)| {
            let y = DVector::from_iterator(pts.len(), pts.iter().map(|x| ai + bi * x));
            fit_emulator(&points, &y, &BasisSpec::linear(1), &corr).unwrap()
        })
        .collect()
}

/// Inputs of the linear-Gaussian calibration: three observed depths and one held out.
pub struct Conjugate {
    pub ems: Vec<EmulatorPosterior>,
    pub data: ObservationModel,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma_eta_sq: f64,
    pub zeta: f64,
}

pub fn conjugate_case() -> Conjugate {
    let a = vec![1.0, 0.6, 0.3, 0.1];
    let b = vec![1.0, 0.8, 0.5, 0.3];
    let z = vec![1.73, 1.18, 0.62];
    Conjugate {
        ems: linear_emulators(&a, &b),
        data: ObservationModel { observed_depths: vec![0.0, 1.0, 2.0], z, held_out_depth: 3.0, sigma_e_sq: 0.02 },
        a,
        b,
        sigma_eta_sq: 0.01,
        zeta: 0.5,
    }
}

impl Conjugate {
    pub fn model(&self) -> CalibrationModel<'_> {
        let pins = Pins { sigma_eta_sq: Some(self.sigma_eta_sq), zeta: Some(self.zeta), x_star: None };
        CalibrationModel::new(self.ems[..3].iter().collect(), &self.ems[3], &self.data, DiscrepancyPrior::default(), pins).unwrap()
    }

    /// Posterior mean of the held-out value: `x` is a normal truncated to `[0, 1]`
    /// and the held-out conditional mean is linear in `x`.
    pub fn closed_form(&self) -> f64 {
        let d = &self.data.observed_depths;
        let k = DMatrix::from_fn(3, 3, |i, j| {
            self.sigma_eta_sq * (-self.zeta * (d[i] - d[j]).powi(2)).exp() + if i == j { self.data.sigma_e_sq } else { 0.0 }
        });
        let k_inv = k.try_inverse().unwrap();
        let a = DVector::from_column_slice(&self.a[..3]);
        let b = DVector::from_column_slice(&self.b[..3]);
        let z = DVector::from_column_slice(&self.data.z);
        let precision = b.dot(&(&k_inv * &b));
        let mu = b.dot(&(&k_inv * (&z - &a))) / precision;
        let sd = precision.sqrt().recip();
        let std = Normal::new(0.0, 1.0).unwrap();
        let (lo, hi) = ((0.0 - mu) / sd, (1.0 - mu) / sd);
        let ex = mu + sd * (std.pdf(lo) - std.pdf(hi)) / (std.cdf(hi) - std.cdf(lo));
        let c = DVector::from_iterator(3, d.iter().map(|&di| self.sigma_eta_sq * (-self.zeta * (3.0 - di).powi(2)).exp()));
        self.a[3] + self.b[3] * ex + c.dot(&(&k_inv * (&z - &a - &b * ex)))
    }
}
