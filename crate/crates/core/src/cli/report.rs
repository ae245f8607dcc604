//! Human-readable and JSON reports built only from persisted artifacts.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::persist::{read_json, Manifest, OutputDir, RunStatus};
use crate::bayes_linear::{adjust_variance, BeliefSpec, JointSpec};
use crate::calibration::PosteriorSummary;
use crate::engine::PbaResult;
use crate::error::{PbaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Coefficient {
    pub label: String,
    pub observed: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObservedAnalysis {
    pub id: String,
    #[serde(flatten)]
    pub summary: PosteriorSummary,
}

/// Contents of `chains/observed.json`, and of `chains/<id>.json` with one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObservedRecords {
    pub config_hash: String,
    pub analyses: Vec<ObservedAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Assessment {
    pub e_gy: f64,
    pub e_y_given_j0: f64,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub adjusted_variance_by_g: f64,
    pub adjusted_variance_by_j0: f64,
    pub resolution_lower_bound: f64,
    pub intercept: f64,
    pub coefficients: Vec<Coefficient>,
    pub e_g_standard_errors: Vec<f64>,
    pub cov_y_g_standard_errors: Vec<f64>,
    pub replicates_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub partial: bool,
    pub config_hash: String,
    pub planned_replicates: usize,
    pub completed_replicates: usize,
    pub partial_replicates: Option<usize>,
    pub assessment: Option<Assessment>,
    pub observed: Vec<ObservedAnalysis>,
}

fn assessment(result: &PbaResult) -> Result<Assessment> {
    let m = &result.moment_estimates;
    let joint = JointSpec::new(
        BeliefSpec::new(m.e_y.clone(), m.var_y.clone())?,
        BeliefSpec::new(m.e_g.clone(), m.var_g.clone())?,
        m.cov_y_g.clone(),
    )?;
    let by_j0: DMatrix<f64> = adjust_variance(&joint.select_data(&[0])?);
    Ok(Assessment {
        e_gy: result.e_gy[0],
        e_y_given_j0: result.observed_g[0],
        prior_mean: m.e_y[0],
        prior_variance: m.var_y[(0, 0)],
        adjusted_variance_by_g: result.adjusted_variance[(0, 0)],
        adjusted_variance_by_j0: by_j0[(0, 0)],
        resolution_lower_bound: result.resolution_lower_bound[0],
        intercept: result.intercept[0],
        coefficients: result
            .g_labels
            .iter()
            .zip(&result.observed_g)
            .enumerate()
            .map(|(i, (l, &g))| Coefficient { label: l.clone(), observed: g, coefficient: result.coefficients[(0, i)] })
            .collect(),
        e_g_standard_errors: m.e_g_se.iter().copied().collect(),
        cov_y_g_standard_errors: m.cov_y_g_se.iter().copied().collect(),
        replicates_used: m.replicates,
    })
}

/// Assembles the report from `manifest.json`, and `result.json` and
/// `chains/observed.json` when present. Without a result, or with an unfinished
/// manifest, the report is marked partial.
pub fn build_report(out: &OutputDir) -> Result<Report> {
    let manifest: Manifest = read_json(&out.manifest())?;
    let result: Option<PbaResult> = if out.result().exists() { Some(read_json(&out.result())?) } else { None };
    let observed = if out.observed().exists() {
        let r: ObservedRecords = read_json(&out.observed())?;
        if r.config_hash != manifest.config_hash {
            return Err(PbaError::Artifact { path: out.observed(), reason: "config hash differs from the manifest".into() });
        }
        r.analyses
    } else {
        Vec::new()
    };
    let assessment = result.as_ref().map(assessment).transpose()?;
    let partial = manifest.status != RunStatus::Complete || assessment.is_none();
    Ok(Report {
        partial,
        config_hash: manifest.config_hash.clone(),
        planned_replicates: manifest.planned_replicates,
        completed_replicates: manifest.completed.len(),
        partial_replicates: result.map(|r| manifest.completed.len().saturating_sub(r.replicate_count)),
        assessment,
        observed,
    })
}

pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "POSTERIOR BELIEF ASSESSMENT{}", if r.partial { " [PARTIAL]" } else { "" });
    let _ = writeln!(s, "config hash          {}", r.config_hash);
    let _ = writeln!(s, "replicates           {} of {} completed", r.completed_replicates, r.planned_replicates);
    if let Some(p) = r.partial_replicates {
        let _ = writeln!(s, "partial replicates   {p} (excluded)");
    }
    match &r.assessment {
        None => {
            let _ = writeln!(s, "\nno assessment yet: the run has not finished");
        }
        Some(a) => {
            let _ = writeln!(s);
            let _ = writeln!(s, "E_G[y]               {:.6}", a.e_gy);
            let _ = writeln!(s, "E[y|z;J0]            {:.6}", a.e_y_given_j0);
            let _ = writeln!(s, "E[y]                 {:.6}", a.prior_mean);
            let _ = writeln!(s, "Var[y]               {:.6e}", a.prior_variance);
            let _ = writeln!(s, "Var_G[y]             {:.6e}", a.adjusted_variance_by_g);
            let _ = writeln!(s, "Var_J0[y]            {:.6e}", a.adjusted_variance_by_j0);
            let _ = writeln!(s, "resolution bound     {:.4}", a.resolution_lower_bound);
            let _ = writeln!(s, "replicates used      {}", a.replicates_used);
            let _ = writeln!(s, "\n{:<8} {:>14} {:>14} {:>12} {:>12}", "G", "observed", "coefficient", "se(E[G])", "se(Cov)");
            let _ = writeln!(s, "{:<8} {:>14} {:>14.6}", "1", "", a.intercept);
            for (i, c) in a.coefficients.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{:<8} {:>14.6} {:>14.6} {:>12.3e} {:>12.3e}",
                    c.label, c.observed, c.coefficient, a.e_g_standard_errors[i], a.cov_y_g_standard_errors[i]
                );
            }
        }
    }
    if !r.observed.is_empty() {
        let _ = writeln!(s, "\n{:<10} {:>12} {:>12} {:>10} {:>10} {:>8}", "analysis", "E[y|z;J]", "variance", "mcse", "accept", "kept");
        for o in &r.observed {
            let m = &o.summary;
            let _ = writeln!(
                s,
                "{:<10} {:>12.6} {:>12.4e} {:>10.2e} {:>10.3} {:>8}",
                o.id, m.expectation, m.variance, m.mcse, m.acceptance_rate, m.n_retained
            );
        }
        let rates: Vec<f64> = r.observed.iter().map(|o| o.summary.acceptance_rate).collect();
        let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let _ = writeln!(s, "acceptance rate      min {min:.3}, mean {mean:.3}");
    }
    s
}
