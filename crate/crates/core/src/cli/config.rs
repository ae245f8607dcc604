//! Run configuration: a TOML file, optional dotted-path overrides and a content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{AnalysisSettings, DiscrepancyPrior, EmulatorSettings, McmcConfig};
use crate::emulator::{AnnealConfig, BetaPrior, NuggetScenarioTable};
use crate::engine::{ClassPartition, PbaSettings};
use crate::error::{PbaError, Result};
use crate::exchangeability::CrossCovPolicy;
use crate::judgement::JudgementSet;
use crate::rng::stream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub ensemble: PathBuf,
    pub observations: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSettings {
    /// Depth whose value is predicted; must be an ensemble output and not observed.
    pub held_out_depth: f64,
    /// Known observation error variance.
    pub sigma_e_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Priors {
    pub discrepancy: DiscrepancyPrior,
    pub half_length: BetaPrior,
    pub nugget_scenarios: NuggetScenarioTable,
}

impl Default for Priors {
    fn default() -> Self {
        let e = EmulatorSettings::default();
        Self {
            discrepancy: DiscrepancyPrior::default(),
            half_length: e.half_length_prior,
            nugget_scenarios: e.nugget_scenarios,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealSettings {
    pub iterations: usize,
    pub cooling: f64,
    pub initial_acceptance: f64,
    pub step: f64,
}

impl Default for AnnealSettings {
    fn default() -> Self {
        let a = AnnealConfig::default();
        Self {
            iterations: a.iterations,
            cooling: a.cooling,
            initial_acceptance: a.initial_acceptance,
            step: a.step,
        }
    }
}

/// MCMC settings without a seed; seeds come from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSettings {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    #[serde(default)]
    pub proposal_scales: Vec<f64>,
    #[serde(default = "yes")]
    pub adapt: bool,
}

fn yes() -> bool {
    true
}

impl McmcSettings {
    fn from_config(c: McmcConfig) -> Self {
        Self {
            n_samples: c.n_samples,
            burn_in: c.burn_in,
            thin: c.thin,
            proposal_scales: c.proposal_scales,
            adapt: c.adapt,
        }
    }

    pub fn with_seed(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            n_samples: self.n_samples,
            burn_in: self.burn_in,
            thin: self.thin,
            proposal_scales: self.proposal_scales.clone(),
            seed,
            adapt: self.adapt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcPhases {
    pub replicate: McmcSettings,
    pub observed: McmcSettings,
}

impl Default for McmcPhases {
    fn default() -> Self {
        Self {
            replicate: McmcSettings::from_config(McmcConfig::replicate(0)),
            observed: McmcSettings::from_config(McmcConfig::full(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum YSamplerConfig {
    /// Random executed judgement set, emulator draw at a uniform best input plus a discrepancy draw.
    Judgement,
    /// Multivariate normal over all ensemble depths.
    Direct { mean: Vec<f64>, variance: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PbaSection {
    pub replicates: usize,
    pub cross_cov: CrossCovPolicy,
    pub max_partial_fraction: f64,
    pub y_sampler: YSamplerConfig,
}

impl Default for PbaSection {
    fn default() -> Self {
        let s = PbaSettings::default();
        Self {
            replicates: s.replicates,
            cross_cov: s.cross_cov,
            max_partial_fraction: s.max_partial_fraction,
            y_sampler: YSamplerConfig::Judgement,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub paths: Paths,
    pub observation: ObservationSettings,
    #[serde(default = "JudgementSet::baseline")]
    pub baseline: JudgementSet,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub anneal: AnnealSettings,
    #[serde(default)]
    pub mcmc: McmcPhases,
    #[serde(default)]
    pub pba: PbaSection,
    #[serde(default)]
    pub partition: ClassPartition,
}

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "PBA_WORKERS";

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `path = value` inside a TOML tree, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PbaError::Config(format!("override `{assignment}` is not of the form path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(PbaError::Config(format!("override path `{path}` has an empty segment")));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| PbaError::Config(format!("override path `{path}`: `{k}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| PbaError::Config(format!("invalid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // the two MCMC phases have different defaults, so partial tables are
        // completed from them rather than from field defaults
        if let Some(toml::Value::Table(user)) = table.get("mcmc") {
            let mut mcmc = toml::Table::try_from(McmcPhases::default()).expect("defaults serialize");
            merge(&mut mcmc, user.clone());
            table.insert("mcmc".into(), toml::Value::Table(mcmc));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PbaError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, applies overrides and the worker environment variable,
    /// and resolves relative paths against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PbaError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let Ok(w) = std::env::var(WORKERS_ENV) {
            cfg.workers = w
                .trim()
                .parse()
                .map_err(|_| PbaError::Config(format!("{WORKERS_ENV}={w} is not a worker count")))?;
            cfg.validate()?;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.ensemble = base.join(&cfg.paths.ensemble);
        cfg.paths.observations = base.join(&cfg.paths.observations);
        cfg.paths.output_dir = base.join(&cfg.paths.output_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PbaError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: PbaError| PbaError::Config(e.to_string());
        if self.workers == 0 {
            return Err(PbaError::Config("workers must be at least 1".into()));
        }
        if !(self.observation.sigma_e_sq >= 0.0) {
            return Err(PbaError::Config("observation.sigma_e_sq must be non-negative".into()));
        }
        self.baseline.validate().map_err(cfg_err)?;
        self.priors.discrepancy.validate().map_err(cfg_err)?;
        BetaPrior::new(self.priors.half_length.a, self.priors.half_length.b).map_err(cfg_err)?;
        self.priors.nugget_scenarios.validate().map_err(cfg_err)?;
        self.mcmc.replicate.with_seed(0).validate().map_err(cfg_err)?;
        self.mcmc.observed.with_seed(0).validate().map_err(cfg_err)?;
        self.partition.validate()?;
        if !(0.0..=1.0).contains(&self.pba.max_partial_fraction) {
            return Err(PbaError::Config("pba.max_partial_fraction must lie in [0, 1]".into()));
        }
        if !(self.anneal.cooling > 0.0 && self.anneal.cooling < 1.0) {
            return Err(PbaError::Config("anneal.cooling must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn emulator_settings(&self) -> EmulatorSettings {
        EmulatorSettings {
            half_length_prior: self.priors.half_length,
            nugget_scenarios: self.priors.nugget_scenarios.clone(),
            anneal: AnnealConfig {
                iterations: self.anneal.iterations,
                cooling: self.anneal.cooling,
                initial_acceptance: self.anneal.initial_acceptance,
                step: self.anneal.step,
                seed: stream_seed(self.master_seed, &[0xA1]),
            },
        }
    }

    pub fn analysis_settings(&self, mcmc_seed: u64) -> AnalysisSettings {
        AnalysisSettings {
            emulator: self.emulator_settings(),
            prior: self.priors.discrepancy,
            mcmc: self.mcmc.observed.with_seed(mcmc_seed),
        }
    }

    pub fn pba_settings(&self) -> PbaSettings {
        PbaSettings {
            replicates: self.pba.replicates,
            master_seed: self.master_seed,
            cross_cov: self.pba.cross_cov,
            max_partial_fraction: self.pba.max_partial_fraction,
        }
    }

    /// Hash of everything that determines results: the config with worker
    /// count and paths removed, plus the bytes of both input files.
    pub fn content_hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.workers = 1;
        canonical.paths = Paths {
            ensemble: PathBuf::new(),
            observations: PathBuf::new(),
            output_dir: PathBuf::new(),
        };
        let mut h = Sha256::new();
        h.update(canonical.to_toml()?.as_bytes());
        for p in [&self.paths.ensemble, &self.paths.observations] {
            let bytes = std::fs::read(p).map_err(|e| PbaError::Config(format!("cannot read {}: {e}", p.display())))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(format!("{:x}", h.finalize()))
    }
}
