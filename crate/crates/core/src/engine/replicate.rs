use std::collections::HashMap;
use std::sync::Arc;

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predictive::{sample_replicate, PriorPredictive};
use crate::calibration::{
    prepare_emulators, run_with_emulators, AnalysisOutput, DiscrepancyPrior, EmulatorBundle, EmulatorSettings, Ensemble, McmcConfig,
    ObservationModel, Pins, PosteriorSummary,
};
use crate::error::{PbaError, Result};
use crate::exchangeability::{adjust_class_means, assemble_g, AnalysisLabel, GVector};
use crate::bayes_linear::JointSpec;
use crate::judgement::JudgementSet;
use crate::rng::stream_seed;

/// Which data an analysis is run on; selects the MCMC settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Sampled `ẑ` inside a moment-estimation replicate.
    Replicate,
    /// The real observations.
    Observed,
}

/// One unit of work handed to an [`AnalysisRunner`].
pub struct AnalysisJob<'a> {
    pub label: &'a AnalysisLabel,
    pub judgement: &'a JudgementSet,
    pub data: &'a ObservationModel,
    pub phase: Phase,
    pub seed: u64,
    /// `ŷ` over every depth when the data were sampled. Only oracle runners in
    /// tests look at it.
    pub truth: Option<&'a [f64]>,
}

/// Runs a full analysis and returns its posterior summary for the held-out quantity.
pub trait AnalysisRunner: Sync {
    fn run(&self, job: &AnalysisJob<'_>) -> Result<PosteriorSummary>;
}

impl PosteriorSummary {
    /// Summary of a deterministic value (used by stub runners).
    pub fn point(expectation: f64) -> Self {
        Self {
            expectation,
            variance: 0.0,
            mcse: 0.0,
            acceptance_rate: 1.0,
            n_retained: 1,
        }
    }
}

/// Calibration-based runner with emulators fitted once per distinct emulator key.
pub struct CalibrationRunner {
    bundles: HashMap<String, Arc<EmulatorBundle>>,
    pub prior: DiscrepancyPrior,
    pub replicate_mcmc: McmcConfig,
    pub observed_mcmc: McmcConfig,
}

impl CalibrationRunner {
    /// Fits emulators at `depths` for every distinct emulator key among `judgements`.
    pub fn new(
        judgements: &[&JudgementSet],
        ensemble: &Ensemble,
        depths: &[f64],
        settings: &EmulatorSettings,
        prior: DiscrepancyPrior,
        replicate_mcmc: McmcConfig,
        observed_mcmc: McmcConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut keyed: Vec<(String, &JudgementSet)> = Vec::new();
        for j in judgements {
            let k = j.emulator_key();
            if !keyed.iter().any(|(e, _)| *e == k) {
                keyed.push((k, j));
            }
        }
        let fitted: Vec<(String, Arc<EmulatorBundle>)> = keyed
            .par_iter()
            .map(|(k, j)| {
                let seed = stream_seed(seed, &[0xE3, crate::rng::label_key(k)]);
                prepare_emulators(j, ensemble, depths, settings, seed)
                    .map(|b| (k.clone(), Arc::new(b)))
                    .map_err(|e| PbaError::Stage { stage: "emulator preparation", source: Box::new(e) })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            bundles: fitted.into_iter().collect(),
            prior,
            replicate_mcmc,
            observed_mcmc,
        })
    }

    pub fn bundle(&self, judgement: &JudgementSet) -> Result<&Arc<EmulatorBundle>> {
        self.bundles
            .get(&judgement.emulator_key())
            .ok_or_else(|| PbaError::Argument(format!("no emulators prepared for {}", judgement.id)))
    }

    pub fn bundle_count(&self) -> usize {
        self.bundles.len()
    }

    /// Like [`AnalysisRunner::run`] but keeps the retained states.
    pub fn run_full(&self, job: &AnalysisJob<'_>) -> Result<AnalysisOutput> {
        let bundle = self.bundle(job.judgement)?;
        let mcmc = match job.phase {
            Phase::Replicate => &self.replicate_mcmc,
            Phase::Observed => &self.observed_mcmc,
        }
        .with_seed(job.seed);
        run_with_emulators(bundle, job.judgement, job.data, &self.prior, &Pins::default(), &mcmc)
    }
}

impl AnalysisRunner for CalibrationRunner {
    fn run(&self, job: &AnalysisJob<'_>) -> Result<PosteriorSummary> {
        Ok(self.run_full(job)?.prediction.summary)
    }
}

/// Analyses of one replicate before any class structure is imposed. Values are
/// ordered as `analyses`: the baseline first, then class members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReplicate {
    pub replicate_id: u64,
    /// `ŷ` at the held-out depth.
    pub y: f64,
    /// `None` where the analysis failed.
    pub values: Vec<Option<f64>>,
}

impl RawReplicate {
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_some())
    }

    pub fn complete_values(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }
}

/// The baseline and every executed class member, in replicate-row order.
#[derive(Debug, Clone)]
pub struct AnalysisPlan {
    pub analyses: Vec<(AnalysisLabel, JudgementSet)>,
}

impl AnalysisPlan {
    pub fn new(baseline: JudgementSet, members: Vec<(AnalysisLabel, JudgementSet)>) -> Self {
        let mut j0 = baseline;
        let label = AnalysisLabel { class_id: 0, member_id: 0, judgement_id: j0.id.clone() };
        j0.id = label.judgement_id.clone();
        let mut analyses = vec![(label, j0)];
        analyses.extend(members);
        Self { analyses }
    }

    pub fn member_labels(&self) -> Vec<AnalysisLabel> {
        self.analyses[1..].iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn judgements(&self) -> Vec<&JudgementSet> {
        self.analyses.iter().map(|(_, j)| j).collect()
    }
}

/// Seed of analysis `a` in replicate `replicate_id` (or on the observed data).
pub fn analysis_seed(master: u64, phase: Phase, replicate_id: u64, a: usize) -> u64 {
    let tag = match phase {
        Phase::Replicate => 0x5E,
        Phase::Observed => 0x0B,
    };
    stream_seed(master, &[tag, replicate_id, a as u64])
}

/// Runs every analysis of `plan` on `data`. Failures are logged and recorded as `None`.
pub fn run_analyses(
    plan: &AnalysisPlan,
    runner: &dyn AnalysisRunner,
    data: &ObservationModel,
    phase: Phase,
    replicate_id: u64,
    master_seed: u64,
    truth: Option<&[f64]>,
) -> Vec<Result<PosteriorSummary>> {
    plan.analyses
        .par_iter()
        .enumerate()
        .map(|(a, (label, judgement))| {
            let job = AnalysisJob {
                label,
                judgement,
                data,
                phase,
                seed: analysis_seed(master_seed, phase, replicate_id, a),
                truth,
            };
            runner.run(&job).map_err(|e| PbaError::Stage { stage: "analysis", source: Box::new(e) })
        })
        .collect()
}

/// Samples `(ŷ, ẑ)` for replicate `replicate_id` and runs the baseline and all
/// class members on `ẑ`.
pub fn run_replicate(
    replicate_id: u64,
    pp: &PriorPredictive,
    plan: &AnalysisPlan,
    runner: &dyn AnalysisRunner,
    master_seed: u64,
) -> Result<RawReplicate> {
    let draw = sample_replicate(pp, stream_seed(master_seed, &[0xD4, replicate_id]))?;
    let data = pp.observation_model(draw.z.clone());
    let results = run_analyses(plan, runner, &data, Phase::Replicate, replicate_id, master_seed, Some(&draw.y));
    let values = results
        .into_iter()
        .zip(&plan.analyses)
        .map(|(r, (label, _))| match r {
            Ok(s) if s.expectation.is_finite() => Some(s.expectation),
            Ok(_) => {
                warn!("replicate {replicate_id}: {} returned a non-finite expectation", label.judgement_id);
                None
            }
            Err(e) => {
                warn!("replicate {replicate_id}: {} failed: {e}", label.judgement_id);
                None
            }
        })
        .collect();
    Ok(RawReplicate { replicate_id, y: draw.y[pp.held_out], values })
}

/// `Ĝ` for one complete row of analysis values (baseline first) given the joint
/// specification of class means and executed members.
pub fn replicate_g(values: &[f64], joint: &JointSpec) -> Result<GVector> {
    let members = DVector::from_column_slice(&values[1..]);
    let means = adjust_class_means(joint, &members, 1)?;
    Ok(assemble_g(DVector::from_element(1, values[0]), &means))
}
