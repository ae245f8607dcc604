//! Cheap synthetic simulator with a known best input and discrepancy, designs
//! over its input space and truth/observation generation.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{Ensemble, ObservationModel};
use crate::emulator::Design;
use crate::error::{PbaError, Result};
use crate::rng::stream;

/// Deterministic temperature-like profile over depth with a smooth nonlinear
/// dependence on three or more normalized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticModel {
    pub dims: usize,
    /// Depth coordinates of every output, observed and held out.
    pub depths: Vec<f64>,
    /// Index into `depths` of the held-out output.
    pub held_out: usize,
    pub true_x_star: Vec<f64>,
    /// Amplitude of the fixed discrepancy `a sin(0.9 d + 0.3)`.
    pub discrepancy_amplitude: f64,
    pub sigma_e_sq: f64,
    /// Interaction strength; zero makes the model additive in the inputs.
    #[serde(default = "default_interaction")]
    pub interaction: f64,
}

fn default_interaction() -> f64 {
    0.6
}

impl Default for SyntheticModel {
    fn default() -> Self {
        Self {
            dims: 3,
            depths: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            held_out: 3,
            true_x_star: vec![0.35, 0.6, 0.45],
            discrepancy_amplitude: 0.06,
            sigma_e_sq: 0.0068,
            interaction: default_interaction(),
        }
    }
}

impl SyntheticModel {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(PbaError::Config("testbed needs at least one input".into()));
        }
        if self.depths.len() < 2 || self.held_out >= self.depths.len() {
            return Err(PbaError::Config("testbed needs two or more depths and a valid held-out index".into()));
        }
        if self.true_x_star.len() != self.dims || self.true_x_star.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(PbaError::Config("true best input must lie in the unit cube".into()));
        }
        if !(self.sigma_e_sq >= 0.0) {
            return Err(PbaError::Config("observation variance must be non-negative".into()));
        }
        Ok(())
    }

    /// Simulator output at normalized input `x` and depth `d`.
    pub fn evaluate(&self, x: &[f64], d: f64) -> f64 {
        let g = |i: usize| x.get(i).copied().unwrap_or(0.5);
        let (x1, x2, x3) = (g(0), g(1), g(2));
        let decay = (-0.35 * d * (0.6 + 0.8 * x2)).exp();
        let surface = 2.2 + 1.6 * x1 + 0.4 * (std::f64::consts::PI * x3).sin();
        let extra: f64 = x.iter().skip(3).enumerate().map(|(i, v)| 0.2 * v / (i + 1) as f64).sum();
        surface * decay + 0.5 + 0.3 * d.sqrt() * x3 + self.interaction * x1 * x2 * (1.0 - 0.15 * d) + extra
    }

    pub fn discrepancy(&self, d: f64) -> f64 {
        self.discrepancy_amplitude * (0.9 * d + 0.3).sin()
    }

    pub fn truth(&self) -> Vec<f64> {
        self.depths
            .iter()
            .map(|&d| self.evaluate(&self.true_x_star, d) + self.discrepancy(d))
            .collect()
    }

    pub fn observed_depths(&self) -> Vec<f64> {
        self.depths
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != self.held_out)
            .map(|(_, &d)| d)
            .collect()
    }

    pub fn held_out_depth(&self) -> f64 {
        self.depths[self.held_out]
    }

    /// Observation model with the given observations on the observed depths.
    pub fn observation_model(&self, z: Vec<f64>) -> ObservationModel {
        ObservationModel {
            observed_depths: self.observed_depths(),
            z,
            held_out_depth: self.held_out_depth(),
            sigma_e_sq: self.sigma_e_sq,
        }
    }

    /// Runs the simulator at every design point and depth.
    pub fn ensemble(&self, points: &DMatrix<f64>) -> Result<Ensemble> {
        let rows: Vec<Vec<f64>> = (0..points.nrows()).map(|i| points.row(i).iter().copied().collect()).collect();
        let outputs = DMatrix::from_fn(points.nrows(), self.depths.len(), |i, k| self.evaluate(&rows[i], self.depths[k]));
        Ensemble::new(Design::new(points.clone(), outputs)?, self.depths.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DesignMethod {
    LatinHypercube,
    KExtendedLatinHypercube { k: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub n: usize,
    pub method: DesignMethod,
    pub seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            n: 40,
            method: DesignMethod::KExtendedLatinHypercube { k: 4 },
            seed: 1,
        }
    }
}

/// Latin hypercube on `[0,1]^r` built from `k` sub-hypercubes of `n/k` points:
/// every sub-design has one point per `k/n` stratum of each input and the union
/// has one point per `1/n` stratum. Rows are ordered by sub-design.
pub fn generate_design(cfg: &DesignConfig, r: usize) -> Result<DMatrix<f64>> {
    let k = match cfg.method {
        DesignMethod::LatinHypercube => 1,
        DesignMethod::KExtendedLatinHypercube { k } => k,
    };
    if cfg.n == 0 || k == 0 || cfg.n % k != 0 {
        return Err(PbaError::Config(format!("design size {} is not divisible into {k} sub-designs", cfg.n)));
    }
    if r == 0 {
        return Err(PbaError::Config("design needs at least one input".into()));
    }
    let m = cfg.n / k;
    let mut rng = stream(cfg.seed, &[0x1A7C]);
    let mut points = DMatrix::zeros(cfg.n, r);
    for dim in 0..r {
        // fine stratum `j * k + owner[j][s]` of coarse stratum j goes to sub-design s
        let owners: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                let mut p: Vec<usize> = (0..k).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        for s in 0..k {
            let mut coarse: Vec<usize> = (0..m).collect();
            coarse.shuffle(&mut rng);
            for (i, &j) in coarse.iter().enumerate() {
                let fine = j * k + owners[j][s];
                let u: f64 = rng.random();
                points[(s * m + i, dim)] = (fine as f64 + u) / cfg.n as f64;
            }
        }
    }
    Ok(points)
}

/// True outputs over all depths and noisy observations on the observed depths.
pub fn generate_truth_and_obs(model: &SyntheticModel, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    model.validate()?;
    let y = model.truth();
    let z = observe(model, &y, seed)?;
    Ok((y, z))
}

/// Adds independent observation error to the observed entries of `y`.
pub fn observe(model: &SyntheticModel, y: &[f64], seed: u64) -> Result<Vec<f64>> {
    let noise = Normal::new(0.0, model.sigma_e_sq.sqrt()).map_err(|e| PbaError::Argument(e.to_string()))?;
    let mut rng = stream(seed, &[0x0B5E]);
    Ok(y.iter()
        .enumerate()
        .filter(|(i, _)| *i != model.held_out)
        .map(|(_, &v)| v + noise.sample(&mut rng))
        .collect())
}
