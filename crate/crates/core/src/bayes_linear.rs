//! Second-order belief arithmetic: Bayes linear adjusted expectations and
//! variances, the linear rule behind them, and resolution ratios.
//!
//! A Bayes linear adjustment of a target block `B` by a data block `D` is
//!
//! ```text
//! E_D[B]   = E[B] + Cov[B,D] Var[D]^+ (d - E[D])
//! Var_D[B] = Var[B] - Cov[B,D] Var[D]^+ Cov[D,B]
//! ```
//!
//! where `Var[D]^+` is an eigenvalue-thresholded Moore-Penrose inverse, so
//! near-singular data blocks (many strongly correlated analyses) are handled
//! without failing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PbaError, Result};
use crate::linalg;

/// Relative eigenvalue threshold used by [`pseudo_inverse`] unless overridden.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;

/// Mean and variance of a block of quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSpec {
    pub mean: DVector<f64>,
    pub variance: DMatrix<f64>,
}

impl BeliefSpec {
    pub fn new(mean: DVector<f64>, variance: DMatrix<f64>) -> Result<Self> {
        if variance.nrows() != mean.len() || variance.ncols() != mean.len() {
            return Err(PbaError::Argument(format!(
                "variance is {}x{} but mean has {} elements",
                variance.nrows(),
                variance.ncols(),
                mean.len()
            )));
        }
        if !linalg::is_symmetric(&variance, SYMMETRY_TOL) {
            return Err(PbaError::Argument("variance is not symmetric".into()));
        }
        let variance = linalg::repair_psd(&variance, "variance")?;
        Ok(Self { mean, variance })
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Joint second-order specification for a target block `B` and a data block `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub target: BeliefSpec,
    pub data: BeliefSpec,
    /// `Cov[B, D]`, `|B| x |D|`.
    pub cross_cov: DMatrix<f64>,
}

impl JointSpec {
    /// Validates the stacked covariance `[[Var B, Cov], [Cov^T, Var D]]` and stores
    /// its PSD-repaired blocks.
    pub fn new(target: BeliefSpec, data: BeliefSpec, cross_cov: DMatrix<f64>) -> Result<Self> {
        let (nb, nd) = (target.dim(), data.dim());
        if cross_cov.nrows() != nb || cross_cov.ncols() != nd {
            return Err(PbaError::Argument(format!(
                "cross covariance is {}x{}, expected {nb}x{nd}",
                cross_cov.nrows(),
                cross_cov.ncols()
            )));
        }
        let mut stacked = DMatrix::zeros(nb + nd, nb + nd);
        stacked.view_mut((0, 0), (nb, nb)).copy_from(&target.variance);
        stacked.view_mut((nb, nb), (nd, nd)).copy_from(&data.variance);
        stacked.view_mut((0, nb), (nb, nd)).copy_from(&cross_cov);
        stacked.view_mut((nb, 0), (nd, nb)).copy_from(&cross_cov.transpose());
        let stacked = linalg::repair_psd(&stacked, "joint variance")?;
        Ok(Self {
            target: BeliefSpec {
                mean: target.mean,
                variance: stacked.view((0, 0), (nb, nb)).into_owned(),
            },
            data: BeliefSpec {
                mean: data.mean,
                variance: stacked.view((nb, nb), (nd, nd)).into_owned(),
            },
            cross_cov: stacked.view((0, nb), (nb, nd)).into_owned(),
        })
    }

    /// Joint specification whose data block is the target itself.
    pub fn self_adjustment(belief: BeliefSpec) -> Result<Self> {
        let cov = belief.variance.clone();
        Self::new(belief.clone(), belief, cov)
    }

    /// Sub-specification keeping only the listed data elements.
    pub fn select_data(&self, idx: &[usize]) -> Result<Self> {
        let nd = self.data.dim();
        if let Some(bad) = idx.iter().find(|&&i| i >= nd) {
            return Err(PbaError::Argument(format!("data index {bad} out of range {nd}")));
        }
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.data.mean[i]));
        let var = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.data.variance[(idx[a], idx[b])]);
        let cov = DMatrix::from_fn(self.target.dim(), idx.len(), |a, b| self.cross_cov[(a, idx[b])]);
        Ok(Self {
            target: self.target.clone(),
            data: BeliefSpec { mean, variance: var },
            cross_cov: cov,
        })
    }
}

/// The linear rule `intercept + weights * d` that reproduces the adjusted expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentWeights {
    /// `|B| x |D|`, one row of data coefficients per target element.
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl AdjustmentWeights {
    pub fn apply(&self, observed: &DVector<f64>) -> Result<DVector<f64>> {
        if observed.len() != self.weights.ncols() {
            return Err(PbaError::Argument(format!(
                "observation has {} elements, expected {}",
                observed.len(),
                self.weights.ncols()
            )));
        }
        Ok(&self.intercept + &self.weights * observed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentResult {
    pub adjusted_mean: DVector<f64>,
    pub adjusted_variance: DMatrix<f64>,
    pub weights: AdjustmentWeights,
    pub resolved_variance: DMatrix<f64>,
    /// Per target element, resolved variance over prior variance (0 when the prior variance is 0).
    pub resolution_ratio: Vec<f64>,
}

pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    linalg::pseudo_inverse(m, rel_tol)
}

pub fn adjustment_weights(joint: &JointSpec) -> AdjustmentWeights {
    let pinv = pseudo_inverse(&joint.data.variance, DEFAULT_PINV_TOL);
    let weights = &joint.cross_cov * pinv;
    let intercept = &joint.target.mean - &weights * &joint.data.mean;
    AdjustmentWeights { weights, intercept }
}

pub fn adjust_expectation(joint: &JointSpec, observed: &DVector<f64>) -> Result<DVector<f64>> {
    adjustment_weights(joint).apply(observed)
}

fn resolved(joint: &JointSpec, w: &AdjustmentWeights) -> DMatrix<f64> {
    linalg::symmetrize(&(&w.weights * joint.cross_cov.transpose()))
}

pub fn adjust_variance(joint: &JointSpec) -> DMatrix<f64> {
    let w = adjustment_weights(joint);
    let rv = resolved(joint, &w);
    linalg::clamp_psd(&(&joint.target.variance - rv), "adjusted variance")
}

/// Full adjustment with provenance.
pub fn adjust(joint: &JointSpec, observed: &DVector<f64>) -> Result<AdjustmentResult> {
    let weights = adjustment_weights(joint);
    let adjusted_mean = weights.apply(observed)?;
    let resolved_variance = resolved(joint, &weights);
    let adjusted_variance = &joint.target.variance - &resolved_variance;
    let resolution_ratio = (0..joint.target.dim())
        .map(|i| {
            let prior = joint.target.variance[(i, i)];
            if prior <= 0.0 {
                0.0
            } else {
                (resolved_variance[(i, i)] / prior).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(AdjustmentResult {
        adjusted_mean,
        adjusted_variance,
        weights,
        resolved_variance,
        resolution_ratio,
    })
}

/// Per-element `1 - diag(A)/diag(B)` where `A` is the adjusted variance under the
/// richer adjustment and `B` under the single-analysis adjustment. This is a lower
/// bound on the proportion of uncertainty removed by the richer adjustment.
pub fn resolution_ratio(
    prior_var: &DMatrix<f64>,
    adjusted_a: &DMatrix<f64>,
    adjusted_b: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let n = prior_var.nrows();
    for (name, m) in [("adjusted_a", adjusted_a), ("adjusted_b", adjusted_b)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(PbaError::Argument(format!("{name} has shape {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
        }
    }
    (0..n)
        .map(|i| {
            let b = adjusted_b[(i, i)];
            if b == 0.0 {
                return Err(PbaError::Degenerate(format!(
                    "adjusted variance of element {i} under the single-analysis adjustment is zero"
                )));
            }
            Ok(1.0 - adjusted_a[(i, i)] / b)
        })
        .collect()
}
