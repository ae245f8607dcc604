use std::path::Path;

use log::info;
use rayon::prelude::*;

use super::config::{RunConfig, YSamplerConfig};
use super::files::{read_ensemble, read_observations, write_ensemble, write_observations};
use super::persist::{load_replicates, read_json, write_atomic, write_chain_csv, write_json_atomic, Manifest, OutputDir, ReplicateLog, RunStatus};
use super::report::{build_report, render_text, ObservedAnalysis, ObservedRecords, Report};
use crate::calibration::{required_depths, Ensemble, ObservationModel, PosteriorSummary};
use crate::engine::{
    analysis_seed, finish_assessment, run_observed, run_replicate, with_workers, AnalysisJob, AnalysisPlan, CalibrationRunner,
    PbaResult, Phase, PredictiveSource, PriorPredictive, Provenance, YSampler,
};
use crate::error::{PbaError, Result};
use crate::exchangeability::AnalysisLabel;
use crate::judgement::JudgementSet;
use crate::testbed::{generate_design, generate_truth_and_obs, DesignConfig, DesignMethod, SyntheticModel};

/// Inputs shared by both analysis commands.
struct Inputs {
    ensemble: Ensemble,
    data: ObservationModel,
    plan: AnalysisPlan,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let ensemble = read_ensemble(&cfg.paths.ensemble)?;
    let (depths, z) = read_observations(&cfg.paths.observations)?;
    let data = ObservationModel {
        observed_depths: depths,
        z,
        held_out_depth: cfg.observation.held_out_depth,
        sigma_e_sq: cfg.observation.sigma_e_sq,
    };
    data.validate().map_err(|e| PbaError::Config(format!("{}: {e}", cfg.paths.observations.display())))?;
    for d in required_depths(&data) {
        ensemble
            .column_of(d)
            .map_err(|e| PbaError::Config(format!("{}: {e}", cfg.paths.ensemble.display())))?;
    }
    let members = cfg.partition.sample_members(cfg.master_seed)?;
    let plan = AnalysisPlan::new(cfg.baseline.clone(), members);
    Ok(Inputs { ensemble, data, plan })
}

fn runner_for(cfg: &RunConfig, judgements: &[&JudgementSet], inputs: &Inputs) -> Result<CalibrationRunner> {
    let emulator = cfg.emulator_settings();
    CalibrationRunner::new(
        judgements,
        &inputs.ensemble,
        &required_depths(&inputs.data),
        &emulator,
        cfg.priors.discrepancy,
        cfg.mcmc.replicate.with_seed(0),
        cfg.mcmc.observed.with_seed(0),
        emulator.anneal.seed,
    )
}

fn write_config_lock(out: &OutputDir, cfg: &RunConfig, hash: &str) -> Result<()> {
    write_atomic(&out.config_lock(), format!("# content hash {hash}\n{}", cfg.to_toml()?).as_bytes())
}

/// Runs one analysis on the observations and persists its chain and summary.
pub fn cmd_run_analysis(cfg: &RunConfig, judgement_id: &str) -> Result<PosteriorSummary> {
    let inputs = load_inputs(cfg)?;
    let (index, (label, judgement)) = inputs
        .plan
        .analyses
        .iter()
        .enumerate()
        .find(|(_, (l, _))| l.judgement_id == judgement_id)
        .ok_or_else(|| {
            PbaError::Config(format!("unknown judgement set `{judgement_id}` (expected J0 or C<class>-M<member>)"))
        })?;
    let out = OutputDir::new(&cfg.paths.output_dir);
    out.create()?;
    let _lock = out.lock_dir()?;
    let hash = cfg.content_hash()?;
    // a full run in the same directory owns config.lock
    if !out.manifest().exists() {
        write_config_lock(&out, cfg, &hash)?;
    }
    let output = with_workers(cfg.workers, || -> Result<_> {
        let runner = runner_for(cfg, &[judgement], &inputs)?;
        let job = AnalysisJob {
            label,
            judgement,
            data: &inputs.data,
            phase: Phase::Observed,
            seed: analysis_seed(cfg.master_seed, Phase::Observed, 0, index),
            truth: None,
        };
        runner.run_full(&job)
    })??;
    let chain = out.chains().join(format!("{judgement_id}.csv"));
    write_chain_csv(&chain, &output.states, &output.prediction)?;
    let summary = output.prediction.summary;
    let record = ObservedRecords {
        config_hash: hash,
        analyses: vec![ObservedAnalysis { id: judgement_id.to_string(), summary: summary.clone() }],
    };
    write_json_atomic(&out.chains().join(format!("{judgement_id}.json")), &record)?;
    Ok(summary)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this many new replicates, leaving a resumable partial run.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: Option<PbaResult>,
    pub report: Report,
}

fn prior_predictive(cfg: &RunConfig, inputs: &Inputs, runner: &CalibrationRunner) -> Result<PriorPredictive> {
    let depths = required_depths(&inputs.data);
    let held_out = depths.len() - 1;
    let sampler = match &cfg.pba.y_sampler {
        YSamplerConfig::Judgement => YSampler::Judgement {
            sources: inputs
                .plan
                .analyses
                .iter()
                .map(|(_, j)| {
                    Ok(PredictiveSource {
                        bundle: runner.bundle(j)?.clone(),
                        prior: cfg.priors.discrepancy.with_tier(j.discrepancy_tier),
                    })
                })
                .collect::<Result<_>>()?,
        },
        YSamplerConfig::Direct { mean, variance } => {
            let n = depths.len();
            if mean.len() != n || variance.len() != n || variance.iter().any(|r| r.len() != n) {
                return Err(PbaError::Config(format!(
                    "pba.y_sampler direct moments must cover {n} depths (observed then held out)"
                )));
            }
            YSampler::Direct {
                mean: nalgebra::DVector::from_column_slice(mean),
                variance: nalgebra::DMatrix::from_fn(n, n, |i, j| variance[i][j]),
            }
        }
    };
    let pp = PriorPredictive { depths, held_out, sigma_e_sq: inputs.data.sigma_e_sq, sampler };
    pp.validate().map_err(|e| PbaError::Config(e.to_string()))?;
    Ok(pp)
}

fn write_report(out: &OutputDir) -> Result<Report> {
    let report = build_report(out)?;
    write_atomic(&out.report_txt(), render_text(&report).as_bytes())?;
    write_json_atomic(&out.report_json(), &report)?;
    Ok(report)
}

/// The full algorithm with incremental persistence. Completed replicates found
/// in the output directory are reused.
pub fn cmd_run_pba(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let settings = cfg.pba_settings();
    if settings.replicates < 2 {
        return Err(PbaError::Estimation(format!(
            "pba.replicates = {}; moment estimation needs at least 2",
            settings.replicates
        )));
    }
    let inputs = load_inputs(cfg)?;
    let out = OutputDir::new(&cfg.paths.output_dir);
    out.create()?;
    let _lock = out.lock_dir()?;
    let hash = cfg.content_hash()?;
    let analyses: Vec<String> = inputs.plan.analyses.iter().map(|(l, _)| l.judgement_id.clone()).collect();

    let mut manifest = if out.manifest().exists() {
        let m: Manifest = read_json(&out.manifest())?;
        if m.config_hash != hash {
            return Err(PbaError::Config(format!(
                "{} holds a run with a different configuration; use a fresh output directory",
                out.root.display()
            )));
        }
        if m.analyses != analyses || m.planned_replicates != settings.replicates {
            return Err(PbaError::Artifact { path: out.manifest(), reason: "manifest does not match the run plan".into() });
        }
        m
    } else {
        Manifest {
            config_hash: hash.clone(),
            planned_replicates: settings.replicates,
            analyses,
            completed: Default::default(),
            status: RunStatus::Running,
        }
    };
    let mut rows = load_replicates(&out, &inputs.plan, &mut manifest)?;
    if !rows.is_empty() {
        info!("resuming with {} completed replicates", rows.len());
    }
    manifest.status = RunStatus::Running;
    write_config_lock(&out, cfg, &hash)?;
    let _ = std::fs::remove_file(out.result());

    let remaining: Vec<u64> = (0..settings.replicates as u64).filter(|id| !manifest.completed.contains(id)).collect();
    let plan = &inputs.plan;
    let (new_rows, manifest, observed) = with_workers(cfg.workers, || -> Result<_> {
        let runner = runner_for(cfg, &plan.judgements(), &inputs)?;
        let pp = prior_predictive(cfg, &inputs, &runner)?;
        let log = ReplicateLog::open(&out, plan, manifest, opts.stop_after)?;
        let new_rows = remaining
            .par_iter()
            .filter_map(|&id| {
                if !log.admit() {
                    return None;
                }
                Some(run_replicate(id, &pp, plan, &runner, settings.master_seed).and_then(|r| {
                    log.record(&r)?;
                    Ok(r)
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = log.manifest();
        let observed = if manifest.completed.len() == settings.replicates {
            Some(run_observed(plan, &runner, &inputs.data, settings.master_seed)?)
        } else {
            None
        };
        Ok((new_rows, manifest, observed))
    })??;
    rows.extend(new_rows);

    let Some(observed) = observed else {
        return Ok(RunOutcome { result: None, report: write_report(&out)? });
    };
    let records = ObservedRecords {
        config_hash: hash.clone(),
        analyses: plan
            .analyses
            .iter()
            .zip(&observed)
            .map(|((l, _), s)| ObservedAnalysis { id: l.judgement_id.clone(), summary: s.clone() })
            .collect(),
    };
    write_json_atomic(&out.observed(), &records)?;
    let outcome = finish_assessment(rows, observed, plan, &settings, Provenance { master_seed: cfg.master_seed, config_hash: hash })?;
    write_json_atomic(&out.result(), &outcome.result)?;
    let mut manifest = manifest;
    manifest.status = RunStatus::Complete;
    write_json_atomic(&out.manifest(), &manifest)?;
    Ok(RunOutcome { result: Some(outcome.result), report: write_report(&out)? })
}

/// Regenerates `report.txt` and `report.json` from the persisted artifacts.
pub fn cmd_report(output_dir: &Path) -> Result<String> {
    let out = OutputDir::new(output_dir);
    if !out.manifest().exists() {
        return Err(PbaError::Artifact { path: out.manifest(), reason: "missing; nothing to report".into() });
    }
    let _lock = out.lock_dir()?;
    let report = write_report(&out)?;
    Ok(render_text(&report))
}

#[derive(Debug, Clone)]
pub struct TestbedOptions {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub replicates: usize,
    /// Members per class; `None` keeps the default class sizes.
    pub class_size: Option<usize>,
}

impl Default for TestbedOptions {
    fn default() -> Self {
        Self { seed: 1, n: 40, k: 4, replicates: 2000, class_size: None }
    }
}

/// Writes a synthetic ensemble, observations, the true values and a run config.
pub fn cmd_gen_testbed(dir: &Path, opts: &TestbedOptions) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(PbaError::io(dir))?;
    let model = SyntheticModel::default();
    let method = if opts.k <= 1 { DesignMethod::LatinHypercube } else { DesignMethod::KExtendedLatinHypercube { k: opts.k } };
    let points = generate_design(&DesignConfig { n: opts.n, method, seed: opts.seed }, model.dims)?;
    let ensemble = model.ensemble(&points)?;
    let (y, z) = generate_truth_and_obs(&model, opts.seed)?;
    write_ensemble(&dir.join("ensemble.csv"), &ensemble)?;
    write_observations(&dir.join("observations.csv"), &model.observed_depths(), &z)?;
    write_observations(&dir.join("truth.csv"), &model.depths, &y)?;
    let mut text = format!(
        "master_seed = {}\nworkers = 1\n\n[paths]\nensemble = \"ensemble.csv\"\nobservations = \"observations.csv\"\noutput_dir = \"run\"\n\n\
         [observation]\nheld_out_depth = {:?}\nsigma_e_sq = {:?}\n\n[pba]\nreplicates = {}\n",
        opts.seed,
        model.held_out_depth(),
        model.sigma_e_sq,
        opts.replicates
    );
    if let Some(c) = opts.class_size {
        let mut p = crate::engine::ClassPartition::default();
        for class in &mut p.classes {
            class.count = c;
        }
        let tail = toml::to_string(&PartitionOnly { partition: p }).map_err(|e| PbaError::Config(e.to_string()))?;
        text.push('\n');
        text.push_str(&tail);
    }
    // the written config must load
    RunConfig::from_toml_str(&text, &[])?;
    write_atomic(&dir.join("pba.toml"), text.as_bytes())
}

#[derive(serde::Serialize)]
struct PartitionOnly {
    partition: crate::engine::ClassPartition,
}

/// Id of the `member`-th member of class `class`.
pub fn member_id(class: usize, member: usize) -> String {
    AnalysisLabel::new(class, member).judgement_id
}
