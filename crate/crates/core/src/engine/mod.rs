//! Posterior belief assessment: replicate sampling, alternative analyses,
//! moment estimation and the final Bayes linear adjustment by `G`.

pub mod assessment;
pub mod moments;
pub mod partition;
pub mod predictive;
pub mod replicate;
pub mod run;

pub use crate::judgement::JudgementSet;
pub use assessment::{apply_assessment, posterior_belief_assessment, resolution_lower_bound, PbaResult, Provenance};
pub use moments::{estimate_moments, MomentEstimates};
pub use partition::{ClassPartition, ClassSpec};
pub use predictive::{sample_replicate, PredictiveSource, PriorPredictive, ReplicateDraw, YSampler};
pub use replicate::{
    analysis_seed, replicate_g, run_analyses, run_replicate, AnalysisJob, AnalysisPlan, AnalysisRunner, CalibrationRunner, Phase,
    RawReplicate,
};
pub use run::{aggregate_replicates, finish_assessment, run_observed, run_pba, run_replicates, with_workers, Aggregate, PbaOutcome, PbaSettings};
