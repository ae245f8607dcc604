//! One complete analysis: emulators built under a judgement set, then calibration
//! and held-out prediction.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::mcmc::{Chain, McmcConfig};
use super::model::{CalibrationModel, CalibrationState, DiscrepancyPrior, ObservationModel, Pins};
use super::predict::{predict_held_out, sample_calibration, HeldOutPrediction};
use crate::emulator::{
    fit_emulator, map_hyperparameters, select_basis, AnnealConfig, BasisSpec, BetaPrior, CorrelationSpec, Design,
    EmulatorPosterior, HyperPriors, MapEstimate, NuggetScenarioTable,
};
use crate::error::{PbaError, Result};
use crate::judgement::JudgementSet;
use crate::rng::stream_seed;

/// Simulator ensemble: a design plus the depth coordinate of each output column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub design: Design,
    pub depths: Vec<f64>,
}

impl Ensemble {
    pub fn new(design: Design, depths: Vec<f64>) -> Result<Self> {
        if depths.len() != design.outputs.ncols() {
            return Err(PbaError::Argument(format!(
                "{} depth coordinates for {} output columns",
                depths.len(),
                design.outputs.ncols()
            )));
        }
        Ok(Self { design, depths })
    }

    pub fn column_of(&self, depth: f64) -> Result<usize> {
        self.depths
            .iter()
            .position(|&d| d == depth)
            .ok_or_else(|| PbaError::Argument(format!("depth {depth} is not an ensemble output")))
    }
}

/// Elicited emulator hyperpriors and search settings shared by every judgement set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct EmulatorSettings {
    /// Beta prior on each half-length correlation before the judgement's scale.
    pub half_length_prior: BetaPrior,
    pub nugget_scenarios: NuggetScenarioTable,
    pub anneal: AnnealConfig,
}

impl Default for EmulatorSettings {
    fn default() -> Self {
        Self {
            half_length_prior: BetaPrior { a: 2.9, b: 5.0 },
            nugget_scenarios: NuggetScenarioTable::default(),
            anneal: AnnealConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthEmulatorInfo {
    pub depth: f64,
    pub basis_terms: Vec<String>,
    pub r_squared: f64,
    pub map: MapEstimate,
}

/// Fitted emulators for every ensemble output under one judgement set.
#[derive(Debug, Clone)]
pub struct EmulatorBundle {
    pub depths: Vec<f64>,
    pub emulators: Vec<EmulatorPosterior>,
    pub info: Vec<DepthEmulatorInfo>,
}

impl EmulatorBundle {
    pub fn at_depth(&self, depth: f64) -> Result<&EmulatorPosterior> {
        self.depths
            .iter()
            .position(|&d| d == depth)
            .map(|i| &self.emulators[i])
            .ok_or_else(|| PbaError::Argument(format!("no emulator at depth {depth}")))
    }
}

/// Basis selection, MAP hyperparameters and conjugate fit for one output column.
pub fn build_emulator(
    judgement: &JudgementSet,
    design: &Design,
    column: usize,
    settings: &EmulatorSettings,
    seed: u64,
) -> Result<(EmulatorPosterior, BasisSpec, f64, MapEstimate)> {
    let y: DVector<f64> = design.output(column);
    let sel = select_basis(&design.points, &y, judgement.basis_policy).map_err(PbaError::stage("basis selection"))?;
    let priors = HyperPriors {
        kappa_beta: vec![settings.half_length_prior.scaled(judgement.kappa_prior_scale); design.dims()],
        nu_beta: settings.nugget_scenarios.lookup(sel.r_squared).scaled(judgement.nu_prior_scale),
    };
    let cfg = AnnealConfig { seed, ..settings.anneal.clone() };
    let map = map_hyperparameters(&design.points, &y, &sel.basis, judgement.correlation_family, &priors, &cfg)
        .map_err(PbaError::stage("hyperparameter search"))?;
    let corr = CorrelationSpec::new(judgement.correlation_family, map.kappa.clone(), map.nu)?;
    let post = fit_emulator(&design.points, &y, &sel.basis, &corr).map_err(PbaError::stage("emulator fit"))?;
    Ok((post, sel.basis, sel.r_squared, map))
}

/// Emulators for the given depths. Depends only on the emulator part of the
/// judgements and the ensemble, so it can be shared across discrepancy tiers
/// and sampled observations.
pub fn prepare_emulators(
    judgement: &JudgementSet,
    ensemble: &Ensemble,
    depths: &[f64],
    settings: &EmulatorSettings,
    seed: u64,
) -> Result<EmulatorBundle> {
    judgement.validate()?;
    let mut emulators = Vec::with_capacity(depths.len());
    let mut info = Vec::with_capacity(depths.len());
    for &d in depths {
        let col = ensemble.column_of(d)?;
        let (post, basis, r2, map) = build_emulator(judgement, &ensemble.design, col, settings, stream_seed(seed, &[col as u64]))?;
        info.push(DepthEmulatorInfo {
            depth: d,
            basis_terms: basis.labels(),
            r_squared: r2,
            map,
        });
        emulators.push(post);
    }
    Ok(EmulatorBundle {
        depths: depths.to_vec(),
        emulators,
        info,
    })
}

/// Depths an observation model needs emulators for: observed then held out.
pub fn required_depths(data: &ObservationModel) -> Vec<f64> {
    let mut d = data.observed_depths.clone();
    d.push(data.held_out_depth);
    d
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub prediction: HeldOutPrediction,
    pub states: Vec<CalibrationState>,
    pub chain: Chain,
}

/// Calibrates against `data` with prepared emulators and predicts the held-out depth.
pub fn run_with_emulators(
    bundle: &EmulatorBundle,
    judgement: &JudgementSet,
    data: &ObservationModel,
    prior: &DiscrepancyPrior,
    pins: &Pins,
    mcmc: &McmcConfig,
) -> Result<AnalysisOutput> {
    let observed = data
        .observed_depths
        .iter()
        .map(|&d| bundle.at_depth(d))
        .collect::<Result<Vec<_>>>()?;
    let held_out = bundle.at_depth(data.held_out_depth)?;
    let model = CalibrationModel::new(observed, held_out, data, prior.with_tier(judgement.discrepancy_tier), pins.clone())?;
    let (states, chain) = sample_calibration(&model, mcmc).map_err(PbaError::stage("calibration sampling"))?;
    let prediction = predict_held_out(&model, &states, chain.acceptance_rate).map_err(PbaError::stage("held-out prediction"))?;
    Ok(AnalysisOutput { prediction, states, chain })
}

/// Everything an analysis needs besides the judgement set, data and ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub emulator: EmulatorSettings,
    pub prior: DiscrepancyPrior,
    pub mcmc: McmcConfig,
}

/// Basis selection, MAP search, per-depth fits, calibration MCMC and held-out
/// prediction for one judgement set. Deterministic given the seeds in `settings`.
pub fn run_analysis(
    judgement: &JudgementSet,
    data: &ObservationModel,
    ensemble: &Ensemble,
    settings: &AnalysisSettings,
) -> Result<AnalysisOutput> {
    data.validate()?;
    let bundle = prepare_emulators(judgement, ensemble, &required_depths(data), &settings.emulator, settings.emulator.anneal.seed)?;
    run_with_emulators(&bundle, judgement, data, &settings.prior, &Pins::default(), &settings.mcmc)
}
