//! Co-exchangeable classes of analyses.
//!
//! Within class `i` every analysis value decomposes as `X_j = M(C_i) + R_j(C_i)`
//! with `Var[M] = Λ_i`, `Var[R_j] = Σ_i - Λ_i`, residuals uncorrelated with each
//! other and with every class mean. Values from different classes covary only
//! through `Cov[M(C_i), M(C_m)]`. This module builds the joint second-order
//! specification of the class means and the executed analyses, adjusts the class
//! means, and estimates the class moments from replicate tables.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes_linear::{self, BeliefSpec, JointSpec, DEFAULT_PINV_TOL};
use crate::error::{PbaError, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMoments {
    pub class_id: usize,
    /// `E[M(C_i)]`.
    pub mean: DVector<f64>,
    /// `Λ_i = Var[M(C_i)]`.
    pub var_m: DMatrix<f64>,
    /// `Σ_i - Λ_i = Var[R_j(C_i)]`.
    pub var_residual: DMatrix<f64>,
    /// `Cov[M(C_i), M(C_j)]` for other classes `j`; missing entries are zero.
    pub cross_var_m: BTreeMap<usize, DMatrix<f64>>,
}

impl ClassMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `Σ_i`, the variance of a single member.
    pub fn member_variance(&self) -> DMatrix<f64> {
        &self.var_m + &self.var_residual
    }

    pub fn scalar(class_id: usize, mean: f64, var_m: f64, var_residual: f64) -> Self {
        Self {
            class_id,
            mean: DVector::from_element(1, mean),
            var_m: DMatrix::from_element(1, 1, var_m),
            var_residual: DMatrix::from_element(1, 1, var_residual),
            cross_var_m: BTreeMap::new(),
        }
    }
}

/// Identifies the `member_id`-th executed analysis of class `class_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnalysisLabel {
    pub class_id: usize,
    pub member_id: usize,
    pub judgement_id: String,
}

impl AnalysisLabel {
    pub fn new(class_id: usize, member_id: usize) -> Self {
        Self {
            class_id,
            member_id,
            judgement_id: format!("C{class_id}-M{member_id}"),
        }
    }
}

/// `(E[y|z;J_0], E_D[M(C_1)], ..., E_D[M(C_k)])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GVector {
    pub components: Vec<DVector<f64>>,
}

impl GVector {
    pub fn block_count(&self) -> usize {
        self.components.len()
    }

    pub fn flatten(&self) -> DVector<f64> {
        let values: Vec<f64> = self.components.iter().flat_map(|c| c.iter().copied()).collect();
        DVector::from_vec(values)
    }
}

pub fn assemble_g(e0: DVector<f64>, adjusted_class_means: &[DVector<f64>]) -> GVector {
    let mut components = Vec::with_capacity(adjusted_class_means.len() + 1);
    components.push(e0);
    components.extend(adjusted_class_means.iter().cloned());
    GVector { components }
}

fn validate_classes(classes: &[ClassMoments]) -> Result<usize> {
    let Some(first) = classes.first() else {
        return Err(PbaError::Argument("no classes".into()));
    };
    let p = first.dim();
    let mut seen = std::collections::BTreeSet::new();
    for c in classes {
        if c.dim() != p || c.var_m.shape() != (p, p) || c.var_residual.shape() != (p, p) {
            return Err(PbaError::Argument(format!("class {} has inconsistent dimensions", c.class_id)));
        }
        if !seen.insert(c.class_id) {
            return Err(PbaError::Argument(format!("duplicate class id {}", c.class_id)));
        }
    }
    Ok(p)
}

/// Looks up `Cov[M(C_a), M(C_b)]`, using the transpose relation when only the
/// reverse entry is present.
fn class_cov(classes: &[ClassMoments], a: usize, b: usize) -> DMatrix<f64> {
    let ca = &classes[a];
    if a == b {
        return ca.var_m.clone();
    }
    let cb = &classes[b];
    if let Some(m) = ca.cross_var_m.get(&cb.class_id) {
        return m.clone();
    }
    if let Some(m) = cb.cross_var_m.get(&ca.class_id) {
        return m.transpose();
    }
    DMatrix::zeros(ca.dim(), cb.dim())
}

fn sorted_classes(classes: &[ClassMoments]) -> Vec<ClassMoments> {
    let mut sorted = classes.to_vec();
    sorted.sort_by_key(|c| c.class_id);
    sorted
}

/// Joint specification with target block `(M(C_1), ..., M(C_k))` ordered by class
/// id and data block the executed analyses in `labels` order.
pub fn build_joint_d(classes: &[ClassMoments], labels: &[AnalysisLabel]) -> Result<JointSpec> {
    let p = validate_classes(classes)?;
    if labels.is_empty() {
        return Err(PbaError::Argument("no executed analyses".into()));
    }
    let classes = sorted_classes(classes);
    let index: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, c)| (c.class_id, i)).collect();
    let owner: Vec<usize> = labels
        .iter()
        .map(|l| {
            index
                .get(&l.class_id)
                .copied()
                .ok_or_else(|| PbaError::Argument(format!("unknown class id {} in {}", l.class_id, l.judgement_id)))
        })
        .collect::<Result<_>>()?;
    let (k, n) = (classes.len(), labels.len());

    let mut var_b = DMatrix::zeros(k * p, k * p);
    for a in 0..k {
        for b in 0..k {
            var_b.view_mut((a * p, b * p), (p, p)).copy_from(&class_cov(&classes, a, b));
        }
    }
    let mean_b = DVector::from_iterator(k * p, classes.iter().flat_map(|c| c.mean.iter().copied()));

    let mut var_d = DMatrix::zeros(n * p, n * p);
    for j in 0..n {
        for l in 0..n {
            let block = if j == l {
                classes[owner[j]].member_variance()
            } else {
                class_cov(&classes, owner[j], owner[l])
            };
            var_d.view_mut((j * p, l * p), (p, p)).copy_from(&block);
        }
    }
    let mean_d = DVector::from_iterator(n * p, owner.iter().flat_map(|&o| classes[o].mean.iter().copied()));

    let mut cov = DMatrix::zeros(k * p, n * p);
    for i in 0..k {
        for j in 0..n {
            cov.view_mut((i * p, j * p), (p, p)).copy_from(&class_cov(&classes, i, owner[j]));
        }
    }

    JointSpec::new(
        BeliefSpec { mean: mean_b, variance: linalg::symmetrize(&var_b) },
        BeliefSpec { mean: mean_d, variance: linalg::symmetrize(&var_d) },
        cov,
    )
}

fn split_blocks(v: &DVector<f64>, p: usize) -> Vec<DVector<f64>> {
    v.as_slice().chunks(p).map(DVector::from_column_slice).collect()
}

/// `E_D[M(C_i)]` for every class, ordered by class id.
pub fn adjust_class_means(joint: &JointSpec, observed: &DVector<f64>, dim: usize) -> Result<Vec<DVector<f64>>> {
    let adjusted = bayes_linear::adjust_expectation(joint, observed)?;
    Ok(split_blocks(&adjusted, dim))
}

/// Adjusted variance of every class mean, ordered by class id.
pub fn adjusted_class_variances(joint: &JointSpec, dim: usize) -> Vec<DMatrix<f64>> {
    let v = bayes_linear::adjust_variance(joint);
    let k = v.nrows() / dim;
    (0..k).map(|i| v.view((i * dim, i * dim), (dim, dim)).into_owned()).collect()
}

/// `W_i = Var[D]^+ Cov[D, M(C_i)]` for every class, each `|D| x dim`.
pub fn class_weights(joint: &JointSpec, dim: usize) -> Vec<DMatrix<f64>> {
    let pinv = bayes_linear::pseudo_inverse(&joint.data.variance, DEFAULT_PINV_TOL);
    let full = pinv * joint.cross_cov.transpose();
    let k = joint.target.dim() / dim;
    (0..k).map(|i| full.columns(i * dim, dim).into_owned()).collect()
}

/// How cross-class mean covariances are estimated from replicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossCovPolicy {
    /// Estimate, then set entries within two standard errors of zero to exactly zero.
    #[default]
    Shrink,
    Estimate,
    Zero,
}

/// Analysis values per replicate. Row `r` holds `labels.len() * dim` values,
/// analysis-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSamples {
    pub dim: usize,
    pub labels: Vec<AnalysisLabel>,
    pub rows: Vec<Vec<f64>>,
}

impl AnalysisSamples {
    fn value(&self, row: usize, analysis: usize) -> DVector<f64> {
        let p = self.dim;
        DVector::from_column_slice(&self.rows[row][analysis * p..(analysis + 1) * p])
    }
}

fn sample_cov(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> DMatrix<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().fold(DVector::zeros(xs[0].len()), |a, x| a + x) / n;
    let my = ys.iter().fold(DVector::zeros(ys[0].len()), |a, y| a + y) / n;
    let mut c = DMatrix::zeros(mx.len(), my.len());
    for (x, y) in xs.iter().zip(ys) {
        c += (x - &mx) * (y - &my).transpose();
    }
    c / (n - 1.0)
}

/// Standard error of each entry of a sample covariance, from the spread of the
/// centered products.
fn sample_cov_se(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> DMatrix<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().fold(DVector::zeros(xs[0].len()), |a, x| a + x) / n;
    let my = ys.iter().fold(DVector::zeros(ys[0].len()), |a, y| a + y) / n;
    DMatrix::from_fn(mx.len(), my.len(), |a, b| {
        let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x[a] - mx[a]) * (y[b] - my[b])).collect();
        let m = prods.iter().sum::<f64>() / n;
        let v = prods.iter().map(|q| (q - m).powi(2)).sum::<f64>() / (n - 1.0);
        (v / n).sqrt()
    })
}

/// Estimates per-class second-order moments from a replicate table.
///
/// With `X̄_i` the within-class member average of a replicate, `S = Var_r(X̄_i)` and
/// `V` the member-averaged variance across replicates, the unbiased estimators
/// are `Λ = (n S - V)/(n - 1)` and `Σ - Λ = V - Λ`. Cross-class covariances are
/// sample covariances of the class averages, handled per `policy`.
pub fn estimate_class_moments(samples: &AnalysisSamples, policy: CrossCovPolicy) -> Result<Vec<ClassMoments>> {
    let p = samples.dim;
    let reps = samples.rows.len();
    if reps < 2 {
        return Err(PbaError::Estimation(format!("{reps} replicate(s); at least 2 are required")));
    }
    if let Some((r, row)) = samples.rows.iter().enumerate().find(|(_, row)| row.len() != samples.labels.len() * p) {
        return Err(PbaError::Estimation(format!("replicate row {r} has {} values", row.len())));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (a, l) in samples.labels.iter().enumerate() {
        members.entry(l.class_id).or_default().push(a);
    }
    let deficient: Vec<String> = members
        .iter()
        .filter(|(_, m)| m.len() < 2)
        .map(|(c, m)| format!("class {c} ({} member)", m.len()))
        .collect();
    if !deficient.is_empty() {
        return Err(PbaError::Estimation(format!(
            "residual variance needs at least 2 members per class: {}",
            deficient.join(", ")
        )));
    }

    let class_ids: Vec<usize> = members.keys().copied().collect();
    let mut class_avgs: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut out = Vec::new();
    for &cid in &class_ids {
        let idx = &members[&cid];
        let n = idx.len() as f64;
        let per_member: Vec<Vec<DVector<f64>>> =
            idx.iter().map(|&a| (0..reps).map(|r| samples.value(r, a)).collect()).collect();
        let avgs: Vec<DVector<f64>> = (0..reps)
            .map(|r| per_member.iter().fold(DVector::zeros(p), |acc, m| acc + &m[r]) / n)
            .collect();
        let mean = avgs.iter().fold(DVector::zeros(p), |a, x| a + x) / reps as f64;
        let s = sample_cov(&avgs, &avgs);
        let v = per_member.iter().fold(DMatrix::zeros(p, p), |acc, m| acc + sample_cov(m, m)) / n;
        let var_m = linalg::clamp_psd(&((&s * n - &v) / (n - 1.0)), "class mean variance");
        let var_residual = linalg::clamp_psd(&(&v - &var_m), "class residual variance");
        out.push(ClassMoments {
            class_id: cid,
            mean,
            var_m,
            var_residual,
            cross_var_m: BTreeMap::new(),
        });
        class_avgs.push(avgs);
    }

    if policy != CrossCovPolicy::Zero {
        for a in 0..class_ids.len() {
            for b in (a + 1)..class_ids.len() {
                let mut c = sample_cov(&class_avgs[a], &class_avgs[b]);
                if policy == CrossCovPolicy::Shrink {
                    let se = sample_cov_se(&class_avgs[a], &class_avgs[b]);
                    for (e, s) in c.iter_mut().zip(se.iter()) {
                        if e.abs() < 2.0 * s {
                            *e = 0.0;
                        }
                    }
                }
                if c.iter().any(|&e| e != 0.0) {
                    out[a].cross_var_m.insert(class_ids[b], c.clone());
                    out[b].cross_var_m.insert(class_ids[a], c.transpose());
                }
            }
        }
        repair_class_mean_covariance(&mut out);
    }
    Ok(out)
}

/// Projects the stacked class-mean covariance onto the PSD cone and writes the
/// blocks back.
fn repair_class_mean_covariance(classes: &mut [ClassMoments]) {
    let k = classes.len();
    let p = classes[0].dim();
    let mut stacked = DMatrix::zeros(k * p, k * p);
    for a in 0..k {
        for b in 0..k {
            stacked.view_mut((a * p, b * p), (p, p)).copy_from(&class_cov(classes, a, b));
        }
    }
    let repaired = linalg::clamp_psd(&stacked, "class mean covariance");
    for a in 0..k {
        classes[a].var_m = repaired.view((a * p, a * p), (p, p)).into_owned();
        for b in 0..k {
            if a != b {
                let id_b = classes[b].class_id;
                let block = repaired.view((a * p, b * p), (p, p)).into_owned();
                if block.iter().any(|&e| e != 0.0) {
                    classes[a].cross_var_m.insert(id_b, block);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dvec;

    fn one_class() -> (Vec<ClassMoments>, Vec<AnalysisLabel>) {
        (
            vec![ClassMoments::scalar(1, 0.0, 1.0, 1.0)],
            vec![AnalysisLabel::new(1, 0), AnalysisLabel::new(1, 1)],
        )
    }

    #[test]
    fn scalar_class_joint_structure() {
        let (c, l) = one_class();
        let j = build_joint_d(&c, &l).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((&j.data.variance - expect).amax() < 1e-14);
        assert!((&j.cross_cov - DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).amax() < 1e-14);
    }

    #[test]
    fn scalar_class_adjustment_and_weights() {
        let (c, l) = one_class();
        let j = build_joint_d(&c, &l).unwrap();
        let m = adjust_class_means(&j, &dvec(&[1.0, 3.0]), 1).unwrap();
        assert!((m[0][0] - 4.0 / 3.0).abs() < 1e-12);
        let w = class_weights(&j, 1);
        assert!((w[0][(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w[0][(1, 0)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn prior_means_observed_leave_means_unchanged() {
        let mut c = ClassMoments::scalar(2, 5.0, 0.7, 0.3);
        c.cross_var_m.insert(1, DMatrix::from_element(1, 1, 0.1));
        let classes = vec![ClassMoments::scalar(1, -1.0, 1.0, 0.5), c];
        let labels = vec![AnalysisLabel::new(1, 0), AnalysisLabel::new(2, 0), AnalysisLabel::new(2, 1)];
        let j = build_joint_d(&classes, &labels).unwrap();
        let m = adjust_class_means(&j, &dvec(&[-1.0, 5.0, 5.0]), 1).unwrap();
        assert!((m[0][0] + 1.0).abs() < 1e-12 && (m[1][0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_only_has_cross_blocks() {
        let mut c2 = ClassMoments::scalar(2, 0.0, 2.0, 1.0);
        c2.cross_var_m.insert(1, DMatrix::from_element(1, 1, 0.25));
        let classes = vec![ClassMoments::scalar(1, 0.0, 1.0, 1.0), c2];
        let labels = vec![AnalysisLabel::new(1, 0), AnalysisLabel::new(1, 1)];
        let j = build_joint_d(&classes, &labels).unwrap();
        assert!((j.cross_cov.row(1).into_owned() - DMatrix::from_row_slice(1, 2, &[0.25, 0.25])).amax() < 1e-14);
    }

    #[test]
    fn no_residual_gives_constant_block() {
        let classes = vec![ClassMoments::scalar(1, 0.0, 1.5, 0.0)];
        let labels: Vec<_> = (0..3).map(|m| AnalysisLabel::new(1, m)).collect();
        let j = build_joint_d(&classes, &labels).unwrap();
        assert!(j.data.variance.iter().all(|&v| (v - 1.5).abs() < 1e-14));
    }

    #[test]
    fn zero_lambda_gives_zero_weights() {
        let classes = vec![ClassMoments::scalar(1, 0.0, 0.0, 1.0)];
        let labels: Vec<_> = (0..3).map(|m| AnalysisLabel::new(1, m)).collect();
        let j = build_joint_d(&classes, &labels).unwrap();
        assert!(class_weights(&j, 1)[0].amax() < 1e-15);
    }

    #[test]
    fn unknown_class_rejected() {
        let (c, _) = one_class();
        let r = build_joint_d(&c, &[AnalysisLabel::new(9, 0)]);
        assert!(matches!(r, Err(PbaError::Argument(_))));
    }

    #[test]
    fn constant_samples_give_zero_variances() {
        let labels: Vec<_> = (0..3).map(|m| AnalysisLabel::new(1, m)).collect();
        let samples = AnalysisSamples { dim: 1, labels, rows: vec![vec![2.5; 3]; 10] };
        let m = estimate_class_moments(&samples, CrossCovPolicy::Shrink).unwrap();
        assert_eq!(m[0].mean[0], 2.5);
        assert!(m[0].var_m[(0, 0)].abs() < 1e-15 && m[0].var_residual[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn single_member_class_is_estimation_error() {
        let labels = vec![AnalysisLabel::new(1, 0), AnalysisLabel::new(1, 1), AnalysisLabel::new(2, 0)];
        let samples = AnalysisSamples { dim: 1, labels, rows: vec![vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 0.0]] };
        match estimate_class_moments(&samples, CrossCovPolicy::Zero) {
            Err(PbaError::Estimation(msg)) => assert!(msg.contains("class 2")),
            other => panic!("expected estimation error, got {other:?}"),
        }
    }

    #[test]
    fn g_assembly_order() {
        let g = assemble_g(dvec(&[1.0]), &[dvec(&[2.0]), dvec(&[3.0])]);
        assert_eq!(g.block_count(), 3);
        assert_eq!(g.flatten().as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(assemble_g(dvec(&[4.0]), &[]).flatten().as_slice(), &[4.0]);
    }
}
