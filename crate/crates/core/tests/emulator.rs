mod common;

use common::gp::*;
use common::rng;
use nalgebra::{DMatrix, DVector};
use pba_core::emulator::correlation::correlation_matrix;
use pba_core::emulator::{
    correlation, fit_emulator, half_length_to_kappa, kappa_to_half_length, log_marginal_likelihood, log_marginal_posterior,
    map_hyperparameters, AnnealConfig, BasisSpec, BetaPrior, CorrelationFamily, CorrelationSpec, HyperPriors,
};
use pba_core::error::PbaError;
use pba_core::linalg::cholesky_jittered;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fit_and_predict_match_bordered_oracle(
        seed in any::<u64>(),
        dims in 1usize..=2,
        linear in any::<bool>(),
        fam in 0usize..4,
        nugget in prop_oneof![Just(0.0), 0.01f64..0.5],
        extra in 0usize..=3,
    ) {
        let mut r = rng(seed);
        let basis = if linear { BasisSpec::linear(dims) } else { BasisSpec::constant(dims) };
        let n = (basis.len() + 3 + extra).min(8);
        let points = uniform_points(&mut r, n, dims);
        let y = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
        let kappa: Vec<f64> = (0..dims).map(|_| r.random_range(0.5..8.0)).collect();
        let corr = CorrelationSpec::new(FAMILIES[fam], kappa, nugget).unwrap();
        prop_assume!(condition(&points, &corr) < 1e6);
        let post = fit_emulator(&points, &y, &basis, &corr).unwrap();
        prop_assert_eq!(post.jitter, 0.0);
        for _ in 0..5 {
            let x: Vec<f64> = (0..dims).map(|_| r.random_range(-0.2..1.2)).collect();
            let o = bordered_oracle(&points, &y, &basis, &corr, &x);
            let (mean, var) = post.predict(&x);
            prop_assert!(close(mean, o.mean, 1e-8), "mean {mean} vs {}", o.mean);
            prop_assert!(close(var, o.variance.max(0.0), 1e-8), "variance {var} vs {}", o.variance);
            prop_assert!(close(post.sigma_hat_sq, o.sigma_sq, 1e-8));
            for k in 0..basis.len() {
                prop_assert!(close(post.beta_hat[k], o.beta[k], 1e-8));
            }
        }
    }

    #[test]
    fn interpolates_design_without_nugget(seed in any::<u64>(), dims in 1usize..=3, fam in 0usize..4) {
        let mut r = rng(seed);
        let n = 10;
        let points = uniform_points(&mut r, n, dims);
        let y = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
        let corr = CorrelationSpec::new(FAMILIES[fam], vec![3.0; dims], 0.0).unwrap();
        prop_assume!(condition(&points, &corr) < 1e6);
        let post = fit_emulator(&points, &y, &BasisSpec::linear(dims), &corr).unwrap();
        for i in 0..n {
            let (m, v) = post.predict(&row(&points, i));
            prop_assert!((m - y[i]).abs() < 1e-8);
            prop_assert!(v.abs() < 1e-8);
        }
    }

    #[test]
    fn reproduces_functions_in_the_basis(seed in any::<u64>(), dims in 1usize..=3, fam in 0usize..4) {
        let mut r = rng(seed);
        let n = 12;
        let points = uniform_points(&mut r, n, dims);
        let coef: Vec<f64> = (0..=dims).map(|_| r.random_range(-3.0..3.0)).collect();
        let f = |x: &[f64]| coef[0] + x.iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>();
        let y = DVector::from_fn(n, |i, _| f(&row(&points, i)));
        let corr = CorrelationSpec::new(FAMILIES[fam], vec![2.0; dims], 0.0).unwrap();
        let post = fit_emulator(&points, &y, &BasisSpec::linear(dims), &corr).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..dims).map(|_| r.random::<f64>()).collect();
            prop_assert!((post.predict(&x).0 - f(&x)).abs() < 1e-8);
        }
    }

    #[test]
    fn correlation_symmetric_and_monotone(fam in 0usize..4, kappa in 0.05f64..20.0, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let spec = CorrelationSpec::new(FAMILIES[fam], vec![kappa, 1.0], 0.0).unwrap();
        prop_assert_eq!(correlation(&[a, c], &[b, 0.3], &spec), correlation(&[b, 0.3], &[a, c], &spec));
        // moving the second point away along the first axis never raises the correlation
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let h = k as f64 / 49.0;
            let v = correlation(&[a, c], &[a + h, c], &spec);
            prop_assert!(v <= prev + 1e-15);
            prop_assert!(v > 0.0 && v <= 1.0);
            prev = v;
        }
    }
}

#[test]
fn correlation_closed_forms() {
    let g = CorrelationSpec::new(CorrelationFamily::gaussian(), vec![1.0], 0.0).unwrap();
    assert_eq!(correlation(&[0.2], &[0.2], &g), 1.0);
    assert!((correlation(&[0.0], &[1.0], &g) - (-1f64).exp()).abs() < 1e-12);
    let m = CorrelationSpec::new(CorrelationFamily::Matern32, vec![1.0], 0.0).unwrap();
    let s3 = 3f64.sqrt();
    assert!((correlation(&[0.0], &[1.0], &m) - (1.0 + s3) * (-s3).exp()).abs() < 1e-12);
}

#[test]
fn psd_after_jitter_on_random_designs() {
    let mut r = rng(2024);
    for case in 0..200 {
        let dims = r.random_range(1..=4);
        let n = r.random_range(3..=40);
        let mut points = uniform_points(&mut r, n, dims);
        if case % 4 == 0 {
            // near-duplicate rows stress the factorization
            let src = row(&points, 0);
            for (j, v) in src.iter().enumerate() {
                points[(n - 1, j)] = v + 1e-9;
            }
        }
        let fam = FAMILIES[case % 4];
        let kappa: Vec<f64> = (0..dims).map(|_| 10f64.powf(r.random_range(-2.0..1.5))).collect();
        let spec = CorrelationSpec::new(fam, kappa, if case % 3 == 0 { 0.0 } else { r.random_range(0.0..0.3) }).unwrap();
        let a = correlation_matrix(&points, &spec);
        let (ch, jitter) = cholesky_jittered(&a).unwrap_or_else(|e| panic!("case {case}: {e}"));
        assert!(ch.l().diagonal().iter().all(|d| *d > 0.0));
        assert!(jitter <= 1e-6);
    }
}

#[test]
fn matern_half_length_round_trip() {
    let mut r = rng(7);
    for fam in [CorrelationFamily::Matern32, CorrelationFamily::Matern52, CorrelationFamily::PowerExponential { p: 1.7 }] {
        for _ in 0..50 {
            let kappa = 10f64.powf(r.random_range(-1.5..1.5));
            let rho = kappa_to_half_length(kappa, fam, 0.5);
            let back = half_length_to_kappa(rho, fam, 0.5).unwrap();
            assert!((back - kappa).abs() <= 1e-10 * kappa.max(1.0), "{fam:?}: {kappa} -> {rho} -> {back}");
        }
    }
}

#[test]
fn symmetric_pair_predicts_average_at_midpoint() {
    let points = DMatrix::from_column_slice(5, 1, &[0.2, 0.8, 0.5, 0.05, 0.95]);
    let y = DVector::from_column_slice(&[1.0, 3.0, 2.0, 0.5, 3.5]);
    let corr = CorrelationSpec::new(CorrelationFamily::gaussian(), vec![4.0], 0.0).unwrap();
    let post = fit_emulator(&points, &y, &BasisSpec::constant(1), &corr).unwrap();
    // the design and outputs are antisymmetric about (0.5, 2)
    assert!((post.predict(&[0.5]).0 - 2.0).abs() < 1e-12);
    assert!((post.predict(&[0.3]).0 + post.predict(&[0.7]).0 - 4.0).abs() < 1e-10);
}

#[test]
fn variance_grows_outside_the_design() {
    let mut r = rng(11);
    let points = uniform_points(&mut r, 20, 2);
    let y = DVector::from_fn(20, |i, _| (3.0 * points[(i, 0)]).sin() + points[(i, 1)].powi(2));
    let corr = CorrelationSpec::new(CorrelationFamily::gaussian(), vec![2.0, 2.0], 0.05).unwrap();
    let post = fit_emulator(&points, &y, &BasisSpec::linear(2), &corr).unwrap();
    let centroid: Vec<f64> = (0..2).map(|j| points.column(j).mean()).collect();
    let mut at_design: Vec<f64> = (0..20).map(|i| post.predict(&row(&points, i)).1).collect();
    at_design.sort_by(f64::total_cmp);
    let far = post.predict(&[4.0, -3.0]).1;
    assert!(far > post.predict(&centroid).1);
    assert!(far > at_design[10]);
}

#[test]
fn collinear_basis_names_terms() {
    let points = DMatrix::from_fn(8, 2, |i, _| i as f64 / 7.0);
    let y = DVector::from_fn(8, |i, _| (i as f64).sin());
    let corr = CorrelationSpec::new(CorrelationFamily::Matern52, vec![1.0, 1.0], 0.1).unwrap();
    match fit_emulator(&points, &y, &BasisSpec::linear(2), &corr) {
        Err(PbaError::Collinearity { terms }) => assert!(!terms.is_empty()),
        other => panic!("expected collinearity, got {other:?}"),
    }
}

#[test]
fn marginal_likelihood_matches_quadrature() {
    // four runs, constant basis: integrate N(y; β1, σ²A) over β and s = ln σ²
    let points = DMatrix::from_column_slice(4, 1, &[0.1, 0.35, 0.6, 0.9]);
    let y = DVector::from_column_slice(&[0.4, -0.3, 1.1, 0.7]);
    let basis = BasisSpec::constant(1);
    let corr = CorrelationSpec::new(CorrelationFamily::Matern52, vec![2.5], 0.2).unwrap();
    let ours = log_marginal_likelihood(&points, &y, &basis, &corr).unwrap().unwrap();

    let a = correlation_matrix(&points, &corr);
    let a_inv = a.clone().try_inverse().unwrap();
    let log_det_a = a.determinant().ln();
    let ones = DVector::from_element(4, 1.0);
    let g = ones.dot(&(&a_inv * &ones));
    let beta_hat = ones.dot(&(&a_inv * &y)) / g;
    let n = 4.0;
    // β is stepped in units of its conditional spread σ/√g, so one grid serves every σ
    let (nt, ns) = (801, 4001);
    let (t_lo, t_hi) = (-14.0, 14.0);
    let (s_lo, s_hi) = (-25.0, 30.0);
    let dt = (t_hi - t_lo) / (nt - 1) as f64;
    let ds = (s_hi - s_lo) / (ns - 1) as f64;
    let mut total = 0.0;
    for j in 0..ns {
        let s = s_lo + j as f64 * ds;
        let sigma = (0.5 * s).exp();
        let w_s = if j == 0 || j == ns - 1 { 0.5 } else { 1.0 };
        let mut inner = 0.0;
        for i in 0..nt {
            let beta = beta_hat + sigma / g.sqrt() * (t_lo + i as f64 * dt);
            let e = &y - &ones * beta;
            let quad = e.dot(&(&a_inv * &e)) / sigma.powi(2);
            let log_n = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + n * s + log_det_a + quad);
            let w_t = if i == 0 || i == nt - 1 { 0.5 } else { 1.0 };
            inner += w_t * log_n.exp();
        }
        total += w_s * inner * dt * sigma / g.sqrt();
    }
    let oracle = (total * ds).ln();
    assert!((ours - oracle).abs() < 1e-6, "{ours} vs {oracle}");
}

#[test]
fn vanishing_nugget_with_duplicates_is_minus_infinity() {
    let points = DMatrix::from_column_slice(6, 1, &[0.1, 0.1, 0.4, 0.6, 0.8, 0.9]);
    let y = DVector::from_column_slice(&[1.0, 1.2, 0.3, -0.2, 0.5, 0.1]);
    let priors = HyperPriors { kappa_beta: vec![BetaPrior::new(2.9, 5.0).unwrap()], nu_beta: BetaPrior::new(1.4, 3.1).unwrap() };
    let fam = CorrelationFamily::gaussian();
    let basis = BasisSpec::constant(1);
    assert!(log_marginal_posterior(&[3.0], 0.1, fam, &points, &y, &basis, &priors).is_finite());
    assert_eq!(log_marginal_posterior(&[3.0], 1e-12, fam, &points, &y, &basis, &priors), f64::NEG_INFINITY);
}

fn grid_argmax(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    (1..n).map(|i| i as f64 / n as f64).max_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap()
}

#[test]
fn flat_likelihood_returns_prior_mode() {
    let points = DMatrix::from_column_slice(8, 1, &[0.05, 0.2, 0.3, 0.45, 0.55, 0.7, 0.8, 0.95]);
    let y = DVector::from_element(8, 2.5);
    let priors = HyperPriors { kappa_beta: vec![BetaPrior::new(2.9, 5.0).unwrap()], nu_beta: BetaPrior::new(2.0, 1.5).unwrap() };
    let cfg = AnnealConfig { iterations: 3000, seed: 5, ..Default::default() };
    let map = map_hyperparameters(&points, &y, &BasisSpec::constant(1), CorrelationFamily::gaussian(), &priors, &cfg).unwrap();
    let nu_mode = grid_argmax(|v| priors.nu_beta.ln_pdf(v), 100_000);
    let rho_mode = grid_argmax(|v| priors.kappa_beta[0].ln_pdf(v), 100_000);
    assert!((map.nu - nu_mode).abs() < 0.05, "{} vs {nu_mode}", map.nu);
    assert!((map.half_lengths[0] - rho_mode).abs() < 0.05);
    assert!(map.log_posterior >= map.start_log_posterior);
}

/// Draws from a zero-mean GP with the given spec at `points`.
fn gp_draw(r: &mut ChaCha8Rng, points: &DMatrix<f64>, spec: &CorrelationSpec) -> DVector<f64> {
    let a = correlation_matrix(points, spec);
    let (ch, _) = cholesky_jittered(&a).unwrap();
    let z = DVector::from_fn(points.nrows(), |_, _| r.sample::<f64, _>(StandardNormal));
    ch.l() * z
}

#[test]
fn map_lies_inside_grid_posterior_band() {
    let mut r = rng(99);
    let n = 25;
    let points = DMatrix::from_fn(n, 1, |i, _| (i as f64 + 0.5) / n as f64);
    let fam = CorrelationFamily::gaussian();
    let truth = CorrelationSpec::new(fam, vec![8.0], 0.05).unwrap();
    let y = gp_draw(&mut r, &points, &truth) * 2.0;
    let basis = BasisSpec::constant(1);
    let priors = HyperPriors { kappa_beta: vec![BetaPrior::new(2.9, 5.0).unwrap()], nu_beta: BetaPrior::new(1.4, 3.1).unwrap() };
    let map = map_hyperparameters(&points, &y, &basis, fam, &priors, &AnnealConfig { seed: 3, ..Default::default() }).unwrap();

    // posterior over half-length correlation on a dense grid, nugget integrated out
    let m = 300;
    let grid: Vec<f64> = (1..m).map(|i| i as f64 / m as f64).collect();
    let mut marginal = vec![0.0; grid.len()];
    let mut best = f64::NEG_INFINITY;
    let mut logs = vec![vec![0.0; grid.len()]; grid.len()];
    for (i, &rho) in grid.iter().enumerate() {
        let kappa = half_length_to_kappa(rho, fam, 0.5).unwrap();
        for (j, &nu) in grid.iter().enumerate() {
            let v = log_marginal_posterior(&[kappa], nu, fam, &points, &y, &basis, &priors);
            logs[i][j] = v;
            best = best.max(v);
        }
    }
    for i in 0..grid.len() {
        marginal[i] = logs[i].iter().map(|v| (v - best).exp()).sum();
    }
    let total: f64 = marginal.iter().sum();
    let mut acc = 0.0;
    let (mut lo, mut hi) = (None, None);
    for (i, w) in marginal.iter().enumerate() {
        acc += w / total;
        if lo.is_none() && acc >= 0.025 {
            lo = Some(grid[i]);
        }
        if hi.is_none() && acc >= 0.975 {
            hi = Some(grid[i]);
        }
    }
    let (lo, hi) = (lo.unwrap(), hi.unwrap());
    let rho_hat = map.half_lengths[0];
    assert!(rho_hat >= lo - 1.0 / m as f64 && rho_hat <= hi + 1.0 / m as f64, "{rho_hat} outside [{lo}, {hi}]");
    // the annealer should get close to the grid optimum
    assert!(map.log_posterior >= best - 0.5, "{} vs grid {best}", map.log_posterior);
}

#[test]
fn map_is_deterministic_given_seed() {
    let mut r = rng(4);
    let points = uniform_points(&mut r, 15, 2);
    let y = DVector::from_fn(15, |i, _| (4.0 * points[(i, 0)]).cos() + points[(i, 1)]);
    let priors = HyperPriors { kappa_beta: vec![BetaPrior::new(2.9, 5.0).unwrap(); 2], nu_beta: BetaPrior::new(1.4, 3.1).unwrap() };
    let cfg = AnnealConfig { iterations: 500, seed: 17, ..Default::default() };
    let fam = CorrelationFamily::Matern52;
    let a = map_hyperparameters(&points, &y, &BasisSpec::linear(2), fam, &priors, &cfg).unwrap();
    let b = map_hyperparameters(&points, &y, &BasisSpec::linear(2), fam, &priors, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.log_posterior >= a.start_log_posterior);
}
