mod common;

use common::rng;
use nalgebra::{DMatrix, DVector};
use pba_core::calibration::PosteriorSummary;
use pba_core::engine::{
    aggregate_replicates, estimate_moments, posterior_belief_assessment, replicate_g, run_pba, sample_replicate, with_workers,
    AnalysisJob, AnalysisPlan, AnalysisRunner, ClassPartition, JudgementSet, MomentEstimates, PbaSettings, PriorPredictive,
    Provenance, RawReplicate, YSampler,
};
use pba_core::error::Result;
use pba_core::exchangeability::{build_joint_d, AnalysisLabel, ClassMoments, CrossCovPolicy, GVector};
use pba_core::rng::stream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

fn plan(counts: &[usize]) -> AnalysisPlan {
    let mut part = ClassPartition::six_class([2; 6]);
    part.classes.truncate(counts.len());
    for (c, &n) in part.classes.iter_mut().zip(counts) {
        c.count = n;
    }
    AnalysisPlan::new(JudgementSet::baseline(), part.sample_members(1).unwrap())
}

fn direct_pp(sigma_e_sq: f64) -> PriorPredictive {
    let mean = DVector::from_column_slice(&[2.0, 1.5, 1.2, 1.0]);
    let variance = DMatrix::from_fn(4, 4, |i, j| 0.3 * (-0.5 * (i as f64 - j as f64).powi(2)).exp() + if i == j { 0.05 } else { 0.0 });
    PriorPredictive { depths: vec![0.0, 1.0, 2.0, 3.0], held_out: 2, sigma_e_sq, sampler: YSampler::Direct { mean, variance } }
}

/// Returns the sampled truth when there is one and a fixed value on real data.
struct Perfect;

impl AnalysisRunner for Perfect {
    fn run(&self, job: &AnalysisJob<'_>) -> Result<PosteriorSummary> {
        let held_out = job.data.observed_depths.iter().filter(|&&d| d < job.data.held_out_depth).count();
        Ok(PosteriorSummary::point(job.truth.map_or(1.7, |y| y[held_out])))
    }
}

/// Independent standard normal noise keyed by the job seed.
struct Noise;

impl AnalysisRunner for Noise {
    fn run(&self, job: &AnalysisJob<'_>) -> Result<PosteriorSummary> {
        let mut r = stream(job.seed, &[1]);
        Ok(PosteriorSummary::point(r.sample(StandardNormal)))
    }
}

/// A crude analysis: mean of the data plus seeded noise, so values depend on both.
struct Crude;

impl AnalysisRunner for Crude {
    fn run(&self, job: &AnalysisJob<'_>) -> Result<PosteriorSummary> {
        let mut r = stream(job.seed, &[2]);
        let m = job.data.z.iter().sum::<f64>() / job.data.z.len() as f64;
        let e: f64 = r.sample(StandardNormal);
        Ok(PosteriorSummary::point(m + 0.1 * e + 0.01 * job.label.class_id as f64))
    }
}

fn settings(replicates: usize) -> PbaSettings {
    PbaSettings { replicates, master_seed: 42, ..PbaSettings::default() }
}

fn observed(pp: &PriorPredictive) -> pba_core::calibration::ObservationModel {
    pp.observation_model(vec![2.1, 1.4, 0.9])
}

#[test]
fn perfect_analyses_reproduce_y() {
    let pp = direct_pp(0.01);
    let p = plan(&[3, 2]);
    let ids: Vec<u64> = (0..60).collect();
    let rows = pba_core::engine::run_replicates(&ids, &pp, &p, &Perfect, 42, &|_| Ok(())).unwrap();
    let agg = aggregate_replicates(&rows, &p, CrossCovPolicy::Shrink, 0.05).unwrap();
    for (g, r) in agg.gs.iter().zip(&agg.ys) {
        assert!(g.iter().all(|v| (v - r[0]).abs() < 1e-10));
    }
    let m = agg.moments(None).unwrap();
    let var_y = m.var_y[(0, 0)];
    for k in 0..m.e_g.len() {
        assert!((m.cov_y_g[(0, k)] - var_y).abs() < 1e-10 * var_y, "component {k}");
    }
    // y is then known exactly, and the resolution bound has nothing left to divide by
    let err = run_pba(&pp, &p, &Perfect, &observed(&pp), &settings(60), Provenance::default()).unwrap_err();
    assert!(matches!(err, pba_core::error::PbaError::Degenerate(_)), "{err}");
}

#[test]
fn noise_analyses_carry_no_covariance() {
    let pp = direct_pp(0.01);
    let out = run_pba(&pp, &plan(&[3, 3]), &Noise, &observed(&pp), &settings(400), Provenance::default()).unwrap();
    let m = &out.result.moment_estimates;
    for k in 0..m.e_g.len() {
        assert!(m.cov_y_g[(0, k)].abs() < 3.0 * m.cov_y_g_se[(0, k)], "component {k}: {} (se {})", m.cov_y_g[(0, k)], m.cov_y_g_se[(0, k)]);
    }
}

#[test]
fn replicate_order_does_not_matter() {
    let pp = direct_pp(0.01);
    let p = plan(&[2, 3]);
    let out = run_pba(&pp, &p, &Crude, &observed(&pp), &settings(50), Provenance::default()).unwrap();
    let mut rows = out.rows.clone();
    rows.shuffle(&mut rng(3));
    let a = aggregate_replicates(&out.rows, &p, CrossCovPolicy::Shrink, 0.05).unwrap();
    let b = aggregate_replicates(&rows, &p, CrossCovPolicy::Shrink, 0.05).unwrap();
    assert_eq!(a.moments(None).unwrap(), b.moments(None).unwrap());
    assert_eq!(a.class_moments, b.class_moments);

    // the estimator itself, fed permuted pairs directly
    let mut idx: Vec<usize> = (0..a.ys.len()).collect();
    idx.shuffle(&mut rng(4));
    let ys: Vec<_> = idx.iter().map(|&i| a.ys[i].clone()).collect();
    let gs: Vec<_> = idx.iter().map(|&i| a.gs[i].clone()).collect();
    let m1 = a.moments(None).unwrap();
    let m2 = estimate_moments(&ys, &gs, None).unwrap();
    assert!((m1.var_g - m2.var_g).amax() < 1e-12);
    assert!((m1.cov_y_g - m2.cov_y_g).amax() < 1e-12);
    assert!((m1.e_g - m2.e_g).amax() < 1e-12);
}

#[test]
fn worker_count_does_not_change_results() {
    let pp = direct_pp(0.02);
    let p = plan(&[3, 2, 2]);
    let run = |w: usize| with_workers(w, || run_pba(&pp, &p, &Crude, &observed(&pp), &settings(40), Provenance::default())).unwrap().unwrap();
    let one = run(1);
    for w in [2, 4, 8] {
        let other = run(w);
        assert_eq!(one.result, other.result, "{w} workers");
        assert_eq!(one.rows, other.rows);
    }
}

#[test]
fn partial_replicates_are_excluded() {
    let p = plan(&[2]);
    let mut rows: Vec<RawReplicate> = (0..40)
        .map(|i| RawReplicate {
            replicate_id: i,
            y: (i as f64).sin(),
            values: vec![Some((i as f64).sin() + 0.1), Some((i as f64 * 0.7).cos()), Some((i as f64 * 1.3).cos())],
        })
        .collect();
    rows[5].values[1] = None;
    let agg = aggregate_replicates(&rows, &p, CrossCovPolicy::Estimate, 0.05).unwrap();
    assert_eq!((agg.used, agg.partial), (39, 1));
    rows[6].values[2] = None;
    rows[7].values[0] = None;
    assert!(aggregate_replicates(&rows, &p, CrossCovPolicy::Estimate, 0.05).is_err());
}

fn block_moments(include_third: bool) -> MomentEstimates {
    // G2 is uncorrelated with y and with the other components
    let var_g_full = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.0, 0.4, 0.8, 0.0, 0.0, 0.0, 0.6]);
    let cov_full = DMatrix::from_row_slice(1, 3, &[0.5, 0.3, 0.0]);
    let k = if include_third { 3 } else { 2 };
    MomentEstimates {
        e_y: DVector::from_element(1, 2.0),
        var_y: DMatrix::from_element(1, 1, 1.2),
        e_g: DVector::from_column_slice(&[2.0, 1.9, 0.4][..k]),
        var_g: var_g_full.view((0, 0), (k, k)).into_owned(),
        cov_y_g: cov_full.columns(0, k).into_owned(),
        e_g_se: DVector::zeros(k),
        cov_y_g_se: DMatrix::zeros(1, k),
        replicates: 100,
        degenerate: false,
    }
}

#[test]
fn orthogonal_class_can_be_dropped() {
    let g = |v: &[f64]| GVector { components: v.iter().map(|&x| DVector::from_element(1, x)).collect() };
    let full = posterior_belief_assessment(&block_moments(true), &g(&[2.4, 1.5, -3.0])).unwrap();
    let reduced = posterior_belief_assessment(&block_moments(false), &g(&[2.4, 1.5])).unwrap();
    assert!((full.e_gy[0] - reduced.e_gy[0]).abs() < 1e-10);
    assert!(full.coefficients[(0, 2)].abs() < 1e-12);
}

#[test]
fn two_member_class_adjustment_by_hand() {
    let classes = vec![ClassMoments::scalar(1, 0.5, 1.0, 0.5)];
    let labels = vec![AnalysisLabel::new(1, 0), AnalysisLabel::new(1, 1)];
    let joint = build_joint_d(&classes, &labels).unwrap();
    let g = replicate_g(&[9.0, 1.5, 2.5], &joint).unwrap();
    // Var[D] = [[1.5, 1], [1, 1.5]], Cov[M, D] = [1, 1], so each weight is 1 / 2.5
    let expected = 0.5 + 0.4 * (1.5 - 0.5) + 0.4 * (2.5 - 0.5);
    assert_eq!(g.components[0][0], 9.0);
    assert!((g.components[1][0] - expected).abs() < 1e-14);
}

#[test]
fn direct_prior_predictive_recovers_moments() {
    let pp = direct_pp(0.04);
    let YSampler::Direct { mean, variance } = &pp.sampler else { unreachable!() };
    let n = 10_000;
    let draws: Vec<_> = (0..n).map(|i| sample_replicate(&pp, 1000 + i as u64).unwrap()).collect();
    for k in 0..4 {
        let xs: Vec<f64> = draws.iter().map(|d| d.y[k]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
        let v = dev.iter().sum::<f64>() / (n as f64 - 1.0);
        let se_m = (v / n as f64).sqrt();
        let m4 = dev.iter().map(|d| d * d).sum::<f64>() / n as f64;
        let se_v = ((m4 - v * v) / n as f64).sqrt();
        assert!((m - mean[k]).abs() < 3.0 * se_m, "mean at depth {k}: {m} vs {}", mean[k]);
        assert!((v - variance[(k, k)]).abs() < 3.0 * se_v, "variance at depth {k}: {v} vs {}", variance[(k, k)]);
    }
    // observation error on the observed depths only
    let err: Vec<f64> = draws.iter().flat_map(|d| [d.z[0] - d.y[0], d.z[2] - d.y[3]]).collect();
    let ve = err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64;
    let se = (err.iter().map(|e| e.powi(4)).sum::<f64>() / err.len() as f64 - ve * ve).sqrt() / (err.len() as f64).sqrt();
    assert!((ve - 0.04).abs() < 3.0 * se);
    assert_eq!(sample_replicate(&pp, 5).unwrap(), sample_replicate(&pp, 5).unwrap());
}

#[test]
fn moment_estimator_recovers_bivariate_generator() {
    let mut r = rng(10);
    let n = 5000;
    // y = a, G = (a + b, 0.5 a - b) with a, b independent N(0, 1)
    let mut ys = Vec::new();
    let mut gs = Vec::new();
    for _ in 0..n {
        let a: f64 = r.sample(StandardNormal);
        let b: f64 = r.sample(StandardNormal);
        ys.push(DVector::from_element(1, 1.0 + a));
        gs.push(DVector::from_column_slice(&[a + b, 0.5 * a - b]));
    }
    let m = estimate_moments(&ys, &gs, None).unwrap();
    for (k, truth) in [1.0, 0.5].iter().enumerate() {
        assert!((m.cov_y_g[(0, k)] - truth).abs() < 3.0 * m.cov_y_g_se[(0, k)]);
        assert!(m.e_g[k].abs() < 3.0 * m.e_g_se[k]);
    }
    assert!((m.e_y[0] - 1.0).abs() < 3.0 / (n as f64).sqrt());
}

#[test]
fn too_few_replicates_is_estimation_error() {
    let pp = direct_pp(0.01);
    let err = run_pba(&pp, &plan(&[2]), &Crude, &observed(&pp), &settings(1), Provenance::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
