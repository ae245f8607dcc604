//! Calibration of a simulator against observations through its emulators, with a
//! Gaussian-process discrepancy over depth and known observation error.

pub mod analysis;
pub mod mcmc;
pub mod model;
pub mod predict;

pub use analysis::{
    prepare_emulators, required_depths, run_analysis, run_with_emulators, AnalysisOutput, AnalysisSettings, EmulatorBundle,
    EmulatorSettings, Ensemble,
};
pub use mcmc::{batch_means_se, rw_metropolis, Chain, LogTarget, McmcConfig};
pub use model::{depth_correlation, CalibrationModel, CalibrationState, DiscrepancyPrior, DiscrepancyTier, ObservationModel, Pins};
pub use predict::{held_out_conditional, predict_held_out, sample_calibration, HeldOutPrediction, PosteriorSummary};
