mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pba_core::bayes_linear::{
    adjust, adjust_expectation, adjust_variance, adjustment_weights, pseudo_inverse, BeliefSpec, JointSpec, DEFAULT_PINV_TOL,
};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pinv_matches_svd(seed in any::<u64>(), n in 1usize..8, rank_gap in 0usize..3) {
        let mut r = rng(seed);
        let rank = n.saturating_sub(rank_gap).max(1);
        let m = random_psd(&mut r, n, rank, 0.0);
        let ours = pseudo_inverse(&m, DEFAULT_PINV_TOL);
        let oracle = svd_pinv(&m);
        let scale = oracle.amax().max(1.0);
        prop_assert!((ours - oracle).amax() / scale < 1e-8);
    }

    #[test]
    fn matches_explicit_inverse(seed in any::<u64>(), nb in 1usize..4, nd in 1usize..6) {
        let mut r = rng(seed);
        let joint = random_joint(&mut r, nb, nd);
        let d = normal_vector(&mut r, nd);
        let ours = adjust_expectation(&joint, &d).unwrap();
        prop_assert!(max_abs(&ours, &direct_adjust(&joint, &d)) < 1e-9);
    }

    #[test]
    fn linear_in_the_target(seed in any::<u64>(), nb in 1usize..4, nd in 1usize..5, a in -3.0f64..3.0, c in -5.0f64..5.0) {
        let mut r = rng(seed);
        let joint = random_joint(&mut r, nb, nd);
        let d = normal_vector(&mut r, nd);
        let scaled = JointSpec::new(
            BeliefSpec::new(joint.target.mean.map(|m| a * m + c), &joint.target.variance * (a * a)).unwrap(),
            joint.data.clone(),
            &joint.cross_cov * a,
        ).unwrap();
        let lhs = adjust_expectation(&scaled, &d).unwrap();
        let rhs = adjust_expectation(&joint, &d).unwrap().map(|v| a * v + c);
        prop_assert!(max_abs(&lhs, &rhs) < 1e-10 * (1.0 + rhs.amax()));
    }

    #[test]
    fn adjusted_variance_below_prior(seed in any::<u64>(), nb in 1usize..4, nd in 1usize..6) {
        let mut r = rng(seed);
        let joint = random_joint(&mut r, nb, nd);
        let v = adjust_variance(&joint);
        for i in 0..nb {
            prop_assert!(v[(i, i)] <= joint.target.variance[(i, i)] + 1e-10);
            prop_assert!(v[(i, i)] >= -1e-10);
        }
    }

    #[test]
    fn weights_reproduce_expectation_exactly(seed in any::<u64>(), nb in 1usize..4, nd in 1usize..6) {
        let mut r = rng(seed);
        let joint = random_joint(&mut r, nb, nd);
        let w = adjustment_weights(&joint);
        for _ in 0..100 {
            let d = normal_vector(&mut r, nd) * 3.0;
            prop_assert_eq!(w.apply(&d).unwrap(), adjust_expectation(&joint, &d).unwrap());
        }
    }

    #[test]
    fn resolution_ratio_in_unit_interval(seed in any::<u64>(), nb in 1usize..4, nd in 1usize..6) {
        let mut r = rng(seed);
        let joint = random_joint(&mut r, nb, nd);
        let res = adjust(&joint, &joint.data.mean).unwrap();
        prop_assert!(res.resolution_ratio.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(max_abs(&res.adjusted_mean, &joint.target.mean) < 1e-10 * (1.0 + joint.target.mean.amax()));
    }
}

/// The Bayes linear rule has the smallest mean squared error among linear rules
/// on draws from any distribution with the specified moments.
#[test]
fn bayes_linear_rule_beats_perturbed_rules_on_samples() {
    let mut r = rng(7);
    let (nb, nd) = (2, 3);
    let joint = random_joint(&mut r, nb, nd);
    let n = nb + nd;
    let mut full = DMatrix::zeros(n, n);
    full.view_mut((0, 0), (nb, nb)).copy_from(&joint.target.variance);
    full.view_mut((nb, nb), (nd, nd)).copy_from(&joint.data.variance);
    full.view_mut((0, nb), (nb, nd)).copy_from(&joint.cross_cov);
    full.view_mut((nb, 0), (nd, nb)).copy_from(&joint.cross_cov.transpose());
    let l = full.cholesky().unwrap().l();
    let mean = DVector::from_iterator(n, joint.target.mean.iter().chain(joint.data.mean.iter()).copied());
    // a skewed distribution with the right first two moments
    let draws: Vec<DVector<f64>> = (0..40_000)
        .map(|_| {
            let e = DVector::from_fn(n, |_, _| {
                let u: f64 = r.random::<f64>();
                -(1.0 - u).ln() - 1.0
            });
            &mean + &l * e
        })
        .collect();
    let mse = |w: &DMatrix<f64>, c: &DVector<f64>| -> f64 {
        draws
            .iter()
            .map(|x| {
                let b = x.rows(0, nb);
                let d = x.rows(nb, nd).into_owned();
                (c + w * d - b).norm_squared()
            })
            .sum::<f64>()
            / draws.len() as f64
    };
    let bl = adjustment_weights(&joint);
    let best = mse(&bl.weights, &bl.intercept);
    for _ in 0..20 {
        let dw = normal_matrix(&mut r, nb, nd) * 0.2;
        let dc = normal_vector(&mut r, nb) * 0.2;
        let alt = mse(&(&bl.weights + dw), &(&bl.intercept + dc));
        assert!(best <= alt, "Bayes linear {best} vs perturbed {alt}");
    }
}

#[test]
fn singular_data_variance_uses_pseudo_inverse() {
    // D = (X, X): duplicated data element
    let b = BeliefSpec::scalar(0.0, 2.0).unwrap();
    let d = BeliefSpec::new(DVector::zeros(2), DMatrix::from_element(2, 2, 1.0)).unwrap();
    let joint = JointSpec::new(b, d, DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
    let e = adjust_expectation(&joint, &DVector::from_vec(vec![0.7, 0.7])).unwrap();
    assert!((e[0] - 0.7).abs() < 1e-12);
    assert!((adjust_variance(&joint)[(0, 0)] - 1.0).abs() < 1e-12);
}
