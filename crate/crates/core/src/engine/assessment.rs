use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::moments::MomentEstimates;
use crate::bayes_linear::{adjust, adjust_variance, resolution_ratio, BeliefSpec, JointSpec};
use crate::error::{PbaError, Result};
use crate::exchangeability::GVector;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub master_seed: u64,
    pub config_hash: String,
}

/// Posterior belief assessment `E_G[y]` with its linear form over `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PbaResult {
    pub e_gy: Vec<f64>,
    pub adjusted_variance: DMatrix<f64>,
    /// `E_G[y] = intercept + coefficients · G`.
    pub coefficients: DMatrix<f64>,
    pub intercept: Vec<f64>,
    pub observed_g: Vec<f64>,
    pub g_labels: Vec<String>,
    /// `1 - Var_G[y] / Var_{G₁}[y]` per element of `y`.
    pub resolution_lower_bound: Vec<f64>,
    pub moment_estimates: MomentEstimates,
    pub replicate_count: usize,
    pub provenance: Provenance,
}

fn joint(m: &MomentEstimates) -> Result<JointSpec> {
    JointSpec::new(
        BeliefSpec::new(m.e_y.clone(), m.var_y.clone())?,
        BeliefSpec::new(m.e_g.clone(), m.var_g.clone())?,
        m.cov_y_g.clone(),
    )
}

/// Labels `J0, C1, ..., Ck` for a `G` with a baseline block and `k` class blocks.
pub fn default_g_labels(blocks: usize) -> Vec<String> {
    std::iter::once("J0".to_string()).chain((1..blocks).map(|i| format!("C{i}"))).collect()
}

/// Bayes linear adjustment of `y` by the observed `G`.
pub fn posterior_belief_assessment(moments: &MomentEstimates, observed_g: &GVector) -> Result<PbaResult> {
    let g = observed_g.flatten();
    if g.len() != moments.e_g.len() {
        return Err(PbaError::Argument(format!(
            "observed G has {} entries, moments describe {}",
            g.len(),
            moments.e_g.len()
        )));
    }
    let spec = joint(moments)?;
    let adj = adjust(&spec, &g)?;
    Ok(PbaResult {
        e_gy: adj.adjusted_mean.iter().copied().collect(),
        adjusted_variance: adj.adjusted_variance,
        coefficients: adj.weights.weights,
        intercept: adj.weights.intercept.iter().copied().collect(),
        observed_g: g.iter().copied().collect(),
        g_labels: default_g_labels(observed_g.block_count()),
        resolution_lower_bound: resolution_lower_bound(moments)?,
        moment_estimates: moments.clone(),
        replicate_count: moments.replicates,
        provenance: Provenance::default(),
    })
}

/// Proportion of the variance left after adjusting by the baseline analysis
/// alone that is removed by adjusting by all of `G`, per element of `y`.
pub fn resolution_lower_bound(moments: &MomentEstimates) -> Result<Vec<f64>> {
    let p = moments.e_y.len();
    if (0..p).any(|i| !(moments.var_y[(i, i)] > 0.0)) {
        return Err(PbaError::Degenerate("prior variance of y is not positive".into()));
    }
    if moments.e_g.len() < p {
        return Err(PbaError::Argument("G is shorter than y".into()));
    }
    let full = joint(moments)?;
    let idx: Vec<usize> = (0..p).collect();
    let first = full.select_data(&idx)?;
    let ratio = resolution_ratio(&moments.var_y, &adjust_variance(&full), &adjust_variance(&first))?;
    Ok(ratio.into_iter().map(|r| r.clamp(0.0, 1.0)).collect())
}

/// `E_G[y]` for another observed `G` under the same moments.
pub fn apply_assessment(result: &PbaResult, g: &DVector<f64>) -> Result<DVector<f64>> {
    if g.len() != result.coefficients.ncols() {
        return Err(PbaError::Argument(format!("G has {} entries, coefficients expect {}", g.len(), result.coefficients.ncols())));
    }
    Ok(DVector::from_column_slice(&result.intercept) + &result.coefficients * g)
}
