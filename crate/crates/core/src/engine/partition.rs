use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::calibration::DiscrepancyTier;
use crate::emulator::{BasisPolicy, CorrelationFamily};
use crate::error::{PbaError, Result};
use crate::exchangeability::AnalysisLabel;
use crate::judgement::JudgementSet;
use crate::rng::stream;

/// One class of not-ruled-out judgement sets: members are drawn uniformly from
/// each option list independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub id: usize,
    pub name: String,
    pub count: usize,
    pub basis_options: Vec<BasisPolicy>,
    pub families: Vec<CorrelationFamily>,
    pub kappa_scales: Vec<f64>,
    pub nu_scales: Vec<f64>,
    pub tiers: Vec<DiscrepancyTier>,
}

impl ClassSpec {
    fn validate(&self) -> Result<()> {
        if self.id == 0 {
            return Err(PbaError::Config("class id 0 is reserved for the baseline analysis".into()));
        }
        if self.count < 2 {
            return Err(PbaError::Config(format!("class {} needs at least 2 members, has {}", self.id, self.count)));
        }
        if self.basis_options.is_empty()
            || self.families.is_empty()
            || self.kappa_scales.is_empty()
            || self.nu_scales.is_empty()
            || self.tiers.is_empty()
        {
            return Err(PbaError::Config(format!("class {} has an empty option list", self.id)));
        }
        Ok(())
    }

    /// Draws member `member` deterministically from the master seed.
    pub fn sample_member(&self, master_seed: u64, member: usize) -> JudgementSet {
        let mut rng = stream(master_seed, &[0xC1A5, self.id as u64, member as u64]);
        let pick = |v: &[f64], rng: &mut _| *v.choose(rng).expect("validated non-empty");
        JudgementSet {
            id: AnalysisLabel::new(self.id, member).judgement_id,
            basis_policy: *self.basis_options.choose(&mut rng).expect("validated non-empty"),
            correlation_family: *self.families.choose(&mut rng).expect("validated non-empty"),
            kappa_prior_scale: pick(&self.kappa_scales, &mut rng),
            nu_prior_scale: pick(&self.nu_scales, &mut rng),
            discrepancy_tier: *self.tiers.choose(&mut rng).expect("validated non-empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPartition {
    pub classes: Vec<ClassSpec>,
}

fn all_families() -> Vec<CorrelationFamily> {
    vec![
        CorrelationFamily::PowerExponential { p: 1.9 },
        CorrelationFamily::PowerExponential { p: 2.0 },
        CorrelationFamily::PowerExponential { p: 1.5 },
        CorrelationFamily::Matern32,
        CorrelationFamily::Matern52,
    ]
}

impl ClassPartition {
    /// Mean-function complexity crossed with discrepancy size: complex, linear and
    /// constant means under standard-or-medium discrepancy (classes 1 to 3) and
    /// under high discrepancy (classes 4 to 6).
    pub fn six_class(counts: [usize; 6]) -> Self {
        let means = [
            ("complex", vec![BasisPolicy::stepwise(0.10), BasisPolicy::stepwise(0.05)]),
            ("linear", vec![BasisPolicy::LinearAll]),
            ("constant", vec![BasisPolicy::Constant]),
        ];
        let tiers = [
            ("standard-medium", vec![DiscrepancyTier::Standard, DiscrepancyTier::Medium]),
            ("high", vec![DiscrepancyTier::High]),
        ];
        let mut classes = Vec::new();
        for (t, (tname, tier_opts)) in tiers.iter().enumerate() {
            for (m, (mname, basis)) in means.iter().enumerate() {
                let id = t * 3 + m + 1;
                classes.push(ClassSpec {
                    id,
                    name: format!("{mname}/{tname}"),
                    count: counts[id - 1],
                    basis_options: basis.clone(),
                    families: all_families(),
                    kappa_scales: vec![0.5, 1.0, 5.0],
                    nu_scales: vec![1.0, 4.0],
                    tiers: tier_opts.clone(),
                });
            }
        }
        Self { classes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(PbaError::Config("partition has no classes".into()));
        }
        let mut ids: Vec<usize> = self.classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.classes.len() {
            return Err(PbaError::Config("duplicate class ids".into()));
        }
        self.classes.iter().try_for_each(ClassSpec::validate)
    }

    /// All executed class members ordered by class id then member index.
    pub fn sample_members(&self, master_seed: u64) -> Result<Vec<(AnalysisLabel, JudgementSet)>> {
        self.validate()?;
        let mut classes: Vec<&ClassSpec> = self.classes.iter().collect();
        classes.sort_by_key(|c| c.id);
        Ok(classes
            .into_iter()
            .flat_map(|c| (0..c.count).map(move |m| (AnalysisLabel::new(c.id, m), c.sample_member(master_seed, m))))
            .collect())
    }
}

impl Default for ClassPartition {
    fn default() -> Self {
        Self::six_class([32, 8, 8, 8, 8, 8])
    }
}
