//! Judgement sets: complete prior and likelihood configurations for one analysis.

use serde::{Deserialize, Serialize};

use crate::calibration::DiscrepancyTier;
use crate::emulator::{BasisPolicy, CorrelationFamily};
use crate::error::{PbaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgementSet {
    pub id: String,
    pub basis_policy: BasisPolicy,
    pub correlation_family: CorrelationFamily,
    /// Multiplier on both roughness Beta hyperparameters (prior mean preserved).
    pub kappa_prior_scale: f64,
    /// Multiplier on both nugget Beta hyperparameters (prior mean preserved).
    pub nu_prior_scale: f64,
    pub discrepancy_tier: DiscrepancyTier,
}

impl JudgementSet {
    /// The designated current judgements: stepwise response surface on 10% of
    /// the degrees of freedom, power exponential correlation with `p = 1.9`,
    /// elicited hyperpriors unscaled and standard discrepancy.
    pub fn baseline() -> Self {
        Self {
            id: "J0".into(),
            basis_policy: BasisPolicy::stepwise(0.10),
            correlation_family: CorrelationFamily::PowerExponential { p: 1.9 },
            kappa_prior_scale: 1.0,
            nu_prior_scale: 1.0,
            discrepancy_tier: DiscrepancyTier::Standard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.correlation_family.validate()?;
        if !(self.kappa_prior_scale > 0.0 && self.kappa_prior_scale.is_finite()) {
            return Err(PbaError::Argument(format!("kappa prior scale {} must be positive", self.kappa_prior_scale)));
        }
        if !(self.nu_prior_scale > 0.0 && self.nu_prior_scale <= 4.0) {
            return Err(PbaError::Argument(format!("nugget prior scale {} outside (0, 4]", self.nu_prior_scale)));
        }
        if let BasisPolicy::Stepwise { df_fraction, delete_threshold } = self.basis_policy {
            if !(df_fraction > 0.0 && df_fraction <= 1.0) || !(delete_threshold >= 0.0) {
                return Err(PbaError::Argument("invalid stepwise settings".into()));
            }
        }
        Ok(())
    }

    /// Key of the emulator-relevant part of the judgements; sets sharing it share emulators.
    pub fn emulator_key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            serde_json::to_string(&self.basis_policy).expect("serializable"),
            serde_json::to_string(&self.correlation_family).expect("serializable"),
            self.kappa_prior_scale,
            self.nu_prior_scale
        )
    }
}
