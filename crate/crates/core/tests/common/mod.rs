//! Helpers shared by the integration tests: random instances and independent
//! reference implementations built on dense matrix algebra.
#![allow(dead_code)]

pub mod conjugate;
pub mod gp;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pba_core::bayes_linear::{BeliefSpec, JointSpec};
use pba_core::exchangeability::{AnalysisLabel, ClassMoments};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

pub fn normal_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample(StandardNormal))
}

/// `A Aᵀ` with `A` of shape `n x rank`, plus `ridge I`.
pub fn random_psd(r: &mut ChaCha8Rng, n: usize, rank: usize, ridge: f64) -> DMatrix<f64> {
    let a = normal_matrix(r, n, rank);
    let m = &a * a.transpose() + DMatrix::identity(n, n) * ridge;
    (&m + m.transpose()) * 0.5
}

/// A valid joint specification of `B` (`nb`) and `D` (`nd`) with a well
/// conditioned `Var[D]`.
pub fn random_joint(r: &mut ChaCha8Rng, nb: usize, nd: usize) -> JointSpec {
    let n = nb + nd;
    let v = random_psd(r, n, n, 0.1);
    let mean = normal_vector(r, n);
    JointSpec::new(
        BeliefSpec::new(mean.rows(0, nb).into_owned(), v.view((0, 0), (nb, nb)).into_owned()).unwrap(),
        BeliefSpec::new(mean.rows(nb, nd).into_owned(), v.view((nb, nb), (nd, nd)).into_owned()).unwrap(),
        v.view((0, nb), (nb, nd)).into_owned(),
    )
    .unwrap()
}

/// Adjusted expectation by explicit inversion of `Var[D]`.
pub fn direct_adjust(joint: &JointSpec, d: &DVector<f64>) -> DVector<f64> {
    let inv = joint.data.variance.clone().try_inverse().expect("invertible");
    &joint.target.mean + &joint.cross_cov * inv * (d - &joint.data.mean)
}

/// Random class moments for `k` classes of dimension `p`; class mean covariances
/// (including cross-class blocks) come from one PSD matrix.
pub fn random_classes(r: &mut ChaCha8Rng, k: usize, p: usize) -> Vec<ClassMoments> {
    let stacked = random_psd(r, k * p, k * p, 0.05);
    (0..k)
        .map(|i| {
            let mut cross = BTreeMap::new();
            for j in (i + 1)..k {
                cross.insert(j + 1, stacked.view((i * p, j * p), (p, p)).into_owned());
            }
            let residual = if r.random_bool(0.2) { DMatrix::zeros(p, p) } else { random_psd(r, p, p, 0.05) };
            ClassMoments {
                class_id: i + 1,
                mean: normal_vector(r, p),
                var_m: stacked.view((i * p, i * p), (p, p)).into_owned(),
                var_residual: residual,
                cross_var_m: cross,
            }
        })
        .collect()
}

/// Executed members: `counts[i]` analyses of class `i + 1`.
pub fn labels(counts: &[usize]) -> Vec<AnalysisLabel> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| (0..c).map(move |m| AnalysisLabel::new(i + 1, m)))
        .collect()
}

/// Full covariance of `(M(C_1..C_k), X_1..X_n, X_new...)` built from the
/// latent representation `X_j = M(C_{c(j)}) + R_j`, with `extra` unobserved
/// members listed by class index. Returns `(mean, variance)`.
pub fn enumerate_soe(classes: &[ClassMoments], observed: &[usize], extra: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let k = classes.len();
    let p = classes[0].mean.len();
    let members: Vec<usize> = observed.iter().chain(extra).copied().collect();
    let n = members.len();
    // latent vector: class means then one residual per member
    let nl = (k + n) * p;
    let mut latent = DMatrix::zeros(nl, nl);
    for a in 0..k {
        for b in 0..k {
            let block = if a == b {
                classes[a].var_m.clone()
            } else if a < b {
                classes[a].cross_var_m.get(&classes[b].class_id).cloned().unwrap_or_else(|| DMatrix::zeros(p, p))
            } else {
                classes[b].cross_var_m.get(&classes[a].class_id).map(|m| m.transpose()).unwrap_or_else(|| DMatrix::zeros(p, p))
            };
            latent.view_mut((a * p, b * p), (p, p)).copy_from(&block);
        }
    }
    for (j, &c) in members.iter().enumerate() {
        latent.view_mut(((k + j) * p, (k + j) * p), (p, p)).copy_from(&classes[c].var_residual);
    }
    // observable = L latent
    let no = (k + n) * p;
    let mut l = DMatrix::zeros(no, nl);
    for i in 0..k * p {
        l[(i, i)] = 1.0;
    }
    for (j, &c) in members.iter().enumerate() {
        for q in 0..p {
            l[((k + j) * p + q, c * p + q)] = 1.0;
            l[((k + j) * p + q, (k + j) * p + q)] = 1.0;
        }
    }
    let mut mean = DVector::zeros(no);
    for c in 0..k {
        mean.rows_mut(c * p, p).copy_from(&classes[c].mean);
    }
    for (j, &c) in members.iter().enumerate() {
        mean.rows_mut((k + j) * p, p).copy_from(&classes[c].mean);
    }
    (mean, &l * latent * l.transpose())
}

/// Adjusts every non-observed coordinate of the enumerated system by the
/// observed members using an SVD pseudo-inverse. Returns the adjusted class
/// means followed by the adjusted extra members.
pub fn brute_force_adjust(classes: &[ClassMoments], observed: &[usize], extra: &[usize], d: &DVector<f64>) -> DVector<f64> {
    let k = classes.len();
    let p = classes[0].mean.len();
    let (mean, var) = enumerate_soe(classes, observed, extra);
    let obs: Vec<usize> = (k * p..(k + observed.len()) * p).collect();
    let tgt: Vec<usize> = (0..k * p).chain((k + observed.len()) * p..(k + observed.len() + extra.len()) * p).collect();
    let vd = var.select_rows(&obs).select_columns(&obs);
    let cov = var.select_rows(&tgt).select_columns(&obs);
    mean.select_rows(&tgt) + cov * svd_pinv(&vd) * (d - mean.select_rows(&obs))
}

/// Pseudo-inverse via SVD, dropping singular values below `1e-10` of the largest.
pub fn svd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let eps = 1e-10 * svd.singular_values.max();
    let recon = svd.clone().recompose().unwrap();
    let mut x = if (&recon - m).amax() <= 1e-12 * m.amax().max(1.0) {
        svd.pseudo_inverse(eps).unwrap()
    } else {
        // nalgebra's SVD can misfactor exactly rank-deficient inputs; these are
        // all symmetric, so a symmetric eigendecomposition serves instead
        let e = m.clone().symmetric_eigen();
        let inv = e.eigenvalues.map(|v| if v.abs() > eps { 1.0 / v } else { 0.0 });
        &e.eigenvectors * DMatrix::from_diagonal(&inv) * e.eigenvectors.transpose()
    };
    // the SVD alone can leave Penrose residuals near 1e-9; Newton-Schulz polishes them
    let two = DMatrix::<f64>::identity(m.nrows(), m.nrows()) * 2.0;
    for _ in 0..4 {
        x = &x * (&two - m * &x);
    }
    (&x + x.transpose()) * 0.5
}

pub fn max_abs(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
