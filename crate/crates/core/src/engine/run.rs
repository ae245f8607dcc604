use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assessment::{posterior_belief_assessment, PbaResult, Provenance};
use super::moments::{estimate_moments, MomentEstimates};
use super::predictive::PriorPredictive;
use super::replicate::{replicate_g, run_analyses, run_replicate, AnalysisPlan, AnalysisRunner, Phase, RawReplicate};
use crate::bayes_linear::JointSpec;
use crate::calibration::{ObservationModel, PosteriorSummary};
use crate::error::{PbaError, Result};
use crate::exchangeability::{build_joint_d, estimate_class_moments, AnalysisSamples, ClassMoments, CrossCovPolicy, GVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbaSettings {
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub cross_cov: CrossCovPolicy,
    /// Abort when more than this fraction of replicates has a failed analysis.
    #[serde(default = "default_max_partial")]
    pub max_partial_fraction: f64,
}

fn default_max_partial() -> f64 {
    0.05
}

impl Default for PbaSettings {
    fn default() -> Self {
        Self {
            replicates: 2000,
            master_seed: 1,
            cross_cov: CrossCovPolicy::default(),
            max_partial_fraction: default_max_partial(),
        }
    }
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PbaError::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the given replicates in parallel. `on_done` sees each replicate as it
/// finishes (in completion order); the returned rows are sorted by id.
pub fn run_replicates(
    ids: &[u64],
    pp: &PriorPredictive,
    plan: &AnalysisPlan,
    runner: &dyn AnalysisRunner,
    master_seed: u64,
    on_done: &(dyn Fn(&RawReplicate) -> Result<()> + Sync),
) -> Result<Vec<RawReplicate>> {
    pp.validate()?;
    let mut rows = ids
        .par_iter()
        .map(|&id| {
            let row = run_replicate(id, pp, plan, runner, master_seed)?;
            on_done(&row)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.replicate_id);
    Ok(rows)
}

/// Class moments and paired `(ŷ, Ĝ)` replicates derived from raw rows.
#[derive(Debug, Clone)]
pub struct Aggregate {
    pub class_moments: Vec<ClassMoments>,
    pub joint: JointSpec,
    pub ys: Vec<DVector<f64>>,
    pub gs: Vec<DVector<f64>>,
    pub used: usize,
    pub partial: usize,
}

/// Drops partial replicates, estimates the class moments from the member
/// values and assembles `Ĝ` for every complete replicate. Order independent.
pub fn aggregate_replicates(rows: &[RawReplicate], plan: &AnalysisPlan, policy: CrossCovPolicy, max_partial_fraction: f64) -> Result<Aggregate> {
    let mut sorted: Vec<&RawReplicate> = rows.iter().collect();
    sorted.sort_by_key(|r| r.replicate_id);
    let width = plan.analyses.len();
    if let Some(r) = sorted.iter().find(|r| r.values.len() != width) {
        return Err(PbaError::Argument(format!("replicate {} has {} values, plan has {width}", r.replicate_id, r.values.len())));
    }
    let complete: Vec<(f64, Vec<f64>)> = sorted.iter().filter_map(|r| r.complete_values().map(|v| (r.y, v))).collect();
    let partial = sorted.len() - complete.len();
    if partial > 0 {
        warn!("{partial} of {} replicates are partial and excluded", sorted.len());
    }
    if partial as f64 > max_partial_fraction * sorted.len() as f64 {
        return Err(PbaError::Estimation(format!(
            "{partial} of {} replicates are partial, above the {max_partial_fraction} tolerance",
            sorted.len()
        )));
    }
    let labels = plan.member_labels();
    let samples = AnalysisSamples {
        dim: 1,
        labels: labels.clone(),
        rows: complete.iter().map(|(_, v)| v[1..].to_vec()).collect(),
    };
    let class_moments = estimate_class_moments(&samples, policy)?;
    let joint = build_joint_d(&class_moments, &labels)?;
    let gs = complete
        .iter()
        .map(|(_, v)| replicate_g(v, &joint).map(|g| g.flatten()))
        .collect::<Result<Vec<_>>>()?;
    let ys = complete.iter().map(|(y, _)| DVector::from_element(1, *y)).collect();
    Ok(Aggregate {
        class_moments,
        joint,
        ys,
        gs,
        used: complete.len(),
        partial,
    })
}

impl Aggregate {
    pub fn moments(&self, weights: Option<&[f64]>) -> Result<MomentEstimates> {
        estimate_moments(&self.ys, &self.gs, weights)
    }

    /// `G` for a row of analysis values (baseline first).
    pub fn g_of(&self, values: &[f64]) -> Result<GVector> {
        replicate_g(values, &self.joint)
    }
}

#[derive(Debug, Clone)]
pub struct PbaOutcome {
    pub result: PbaResult,
    pub aggregate: Aggregate,
    pub observed: Vec<PosteriorSummary>,
    pub rows: Vec<RawReplicate>,
}

/// Runs every analysis on the real observations; any failure is fatal.
pub fn run_observed(plan: &AnalysisPlan, runner: &dyn AnalysisRunner, data: &ObservationModel, master_seed: u64) -> Result<Vec<PosteriorSummary>> {
    run_analyses(plan, runner, data, Phase::Observed, 0, master_seed, None)
        .into_iter()
        .zip(&plan.analyses)
        .map(|(r, (l, _))| {
            r.map_err(|e| PbaError::Stage { stage: "observed analysis", source: Box::new(e) }).and_then(|s| {
                if s.expectation.is_finite() {
                    Ok(s)
                } else {
                    Err(PbaError::Estimation(format!("{} returned a non-finite expectation", l.judgement_id)))
                }
            })
        })
        .collect()
}

/// Combines replicate rows with the observed analyses into the final assessment.
pub fn finish_assessment(
    rows: Vec<RawReplicate>,
    observed: Vec<PosteriorSummary>,
    plan: &AnalysisPlan,
    settings: &PbaSettings,
    provenance: Provenance,
) -> Result<PbaOutcome> {
    let aggregate = aggregate_replicates(&rows, plan, settings.cross_cov, settings.max_partial_fraction)?;
    let moments = aggregate.moments(None)?;
    let values: Vec<f64> = observed.iter().map(|s| s.expectation).collect();
    let g = aggregate.g_of(&values)?;
    let mut result = posterior_belief_assessment(&moments, &g)?;
    result.provenance = provenance;
    Ok(PbaOutcome { result, aggregate, observed, rows })
}

/// The whole algorithm: sample replicates, run all analyses on each, estimate
/// moments, run all analyses on the observations and adjust.
pub fn run_pba(
    pp: &PriorPredictive,
    plan: &AnalysisPlan,
    runner: &dyn AnalysisRunner,
    observed: &ObservationModel,
    settings: &PbaSettings,
    provenance: Provenance,
) -> Result<PbaOutcome> {
    if settings.replicates < 2 {
        return Err(PbaError::Estimation(format!("{} replicate(s); at least 2 are required", settings.replicates)));
    }
    let ids: Vec<u64> = (0..settings.replicates as u64).collect();
    let rows = run_replicates(&ids, pp, plan, runner, settings.master_seed, &|_| Ok(()))?;
    info!("{} replicates done", rows.len());
    let obs = run_observed(plan, runner, observed, settings.master_seed)?;
    finish_assessment(rows, obs, plan, settings, provenance)
}
