//! Cross-route equivalences and invariances of the loss functions: the
//! linear-time forms against the quadratic definitional oracles, shift and
//! affine invariance, permutation invariance, and finite-difference gradient
//! checks.

mod common;

use common::{assert_grad_close, finite_difference, random_vec, random_vec_away_from, rel_err};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gar_core::autodiff::{backward, Var};
use gar_core::losses::{
    breakdown_values, huber, loss_diff, loss_diffnorm, mae, mae_pearson_fused, mse,
    mse_decomposition, pairwise_diff_quadratic, pairwise_diffnorm_quadratic, Batch, DEFAULT_EPS,
};
use gar_core::metrics::evaluate;
use gar_core::tensor::Tensor;

fn batch_of(pred: &[f64], targ: &[f64]) -> Batch {
    Batch::from_values(Tensor::vector(pred.to_vec()), Tensor::vector(targ.to_vec())).unwrap()
}

#[test]
fn loss_diff_matches_quadratic_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rng.gen_range(2..=256);
        let f = random_vec(&mut rng, n, -10.0, 10.0);
        let y = random_vec(&mut rng, n, -10.0, 10.0);
        let fast = loss_diff(&batch_of(&f, &y)).unwrap().item();
        let slow = pairwise_diff_quadratic(&Tensor::vector(f), &Tensor::vector(y));
        assert!(
            rel_err(fast, slow) < 1e-9,
            "n={n}: {fast} vs {slow} (rel {})",
            rel_err(fast, slow)
        );
    }
}

#[test]
fn loss_diffnorm_matches_quadratic_oracle_and_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..300 {
        let n = rng.gen_range(2..=256);
        let f = random_vec(&mut rng, n, -10.0, 10.0);
        let y = random_vec(&mut rng, n, -10.0, 10.0);
        let b = batch_of(&f, &y);
        let fast = loss_diffnorm(&b, 0.0).unwrap().item();
        let slow =
            pairwise_diffnorm_quadratic(&Tensor::vector(f.clone()), &Tensor::vector(y.clone()))
                .unwrap();
        assert!((fast - slow).abs() < 1e-8, "{fast} vs {slow}");
        let bd = breakdown_values(&Tensor::vector(f), &Tensor::vector(y)).unwrap();
        assert!((fast - (1.0 - bd.pearson)).abs() < 1e-8);
    }
}

#[test]
fn mse_decomposition_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        let n = rng.gen_range(1..=128);
        let f = random_vec(&mut rng, n, -10.0, 10.0);
        let y = random_vec(&mut rng, n, -10.0, 10.0);
        let b = batch_of(&f, &y);
        let (var, sq_mean) = mse_decomposition(&b);
        let m = mse(&b).unwrap().item();
        assert!(rel_err(var + sq_mean, m) < 1e-12);
    }
}

#[test]
fn loss_diff_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..100 {
        let n = rng.gen_range(2..=64);
        let f = random_vec(&mut rng, n, -5.0, 5.0);
        let y = random_vec(&mut rng, n, -5.0, 5.0);
        let c: f64 = rng.gen_range(-100.0..100.0);
        let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
        let a = loss_diff(&batch_of(&f, &y)).unwrap().item();
        let b = loss_diff(&batch_of(&shifted, &y)).unwrap().item();
        assert!((a - b).abs() < 1e-10, "shift by {c}: {a} vs {b}");
    }
}

#[test]
fn loss_diffnorm_affine_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let n = rng.gen_range(2..=64);
        let f = random_vec(&mut rng, n, -5.0, 5.0);
        let y = random_vec(&mut rng, n, -5.0, 5.0);
        let a: f64 = rng.gen_range(0.1..10.0);
        let b: f64 = rng.gen_range(-20.0..20.0);
        let scaled: Vec<f64> = f.iter().map(|v| a * v + b).collect();
        let v1 = loss_diffnorm(&batch_of(&f, &y), 0.0).unwrap().item();
        let v2 = loss_diffnorm(&batch_of(&scaled, &y), 0.0).unwrap().item();
        assert!((v1 - v2).abs() < 1e-8, "affine ({a},{b}): {v1} vs {v2}");
    }
}

#[test]
fn losses_permutation_invariant() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..50 {
        let n = rng.gen_range(2..=64);
        let f = random_vec(&mut rng, n, -5.0, 5.0);
        let y = random_vec(&mut rng, n, -5.0, 5.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let fp: Vec<f64> = perm.iter().map(|&i| f[i]).collect();
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let pairs: [(&str, fn(&Batch) -> gar_core::Result<Var>); 4] = [
            ("mae", |b| mae(b)),
            ("mse", |b| mse(b)),
            ("loss_diff", |b| loss_diff(b)),
            ("loss_diffnorm", |b| loss_diffnorm(b, DEFAULT_EPS)),
        ];
        for (name, lf) in pairs {
            let a = lf(&batch_of(&f, &y)).unwrap().item();
            let b = lf(&batch_of(&fp, &yp)).unwrap().item();
            assert!(
                rel_err(a, b) < 1e-12,
                "{name} not permutation invariant: {a} vs {b}"
            );
        }
    }
}

#[test]
fn diffnorm_stays_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.gen_range(2..=64);
        let f = random_vec(&mut rng, n, -100.0, 100.0);
        let y = random_vec(&mut rng, n, -100.0, 100.0);
        let v = loss_diffnorm(&batch_of(&f, &y), DEFAULT_EPS).unwrap().item();
        assert!((-1e-9..=2.0 + 1e-9).contains(&v), "out of range: {v}");
    }
}

/// Gradient of every differentiable loss against central differences.
#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    type LossFn = fn(&Batch) -> gar_core::Result<Var>;
    let cases: [(&str, LossFn, &[f64]); 5] = [
        ("mae", |b| mae(b), &[0.0]),
        ("mse", |b| mse(b), &[]),
        ("huber", |b| huber(b, 1.0), &[0.0, 1.0]),
        ("loss_diff", |b| loss_diff(b), &[]),
        ("loss_diffnorm", |b| loss_diffnorm(b, DEFAULT_EPS), &[]),
    ];
    for (name, lf, kinks) in cases {
        for _ in 0..20 {
            let n = rng.gen_range(3..=32);
            let y = random_vec(&mut rng, n, -2.0, 2.0);
            let f = random_vec_away_from(&mut rng, &y, -2.0, 2.0, kinks, 1e-3);

            let pred = Var::leaf(Tensor::vector(f.clone()));
            let batch = Batch::new(pred.clone(), Tensor::vector(y.clone())).unwrap();
            let loss = lf(&batch).unwrap();
            backward(&loss).unwrap();
            let analytic = pred.grad().unwrap().data().to_vec();

            let yv = y.clone();
            let numeric = finite_difference(
                |x| {
                    lf(&batch_of(x, &yv)).unwrap().item()
                },
                &f,
                1e-5,
            );
            assert_grad_close(&analytic, &numeric, 1e-5, 1e-8);
        }
    }
}

/// The fused loss detaches its mixing weight beta from gradient flow, so the
/// finite-difference oracle must hold beta at its unperturbed value.
#[test]
fn mae_pearson_gradient_with_frozen_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..20 {
        let n = rng.gen_range(3..=32);
        let y = random_vec(&mut rng, n, -2.0, 2.0);
        let f = random_vec_away_from(&mut rng, &y, -2.0, 2.0, &[0.0], 1e-3);

        let pred = Var::leaf(Tensor::vector(f.clone()));
        let batch = Batch::new(pred.clone(), Tensor::vector(y.clone())).unwrap();
        let loss = mae_pearson_fused(&batch).unwrap();
        backward(&loss).unwrap();
        let analytic = pred.grad().unwrap().data().to_vec();

        let beta = breakdown_values(&Tensor::vector(f.clone()), &Tensor::vector(y.clone()))
            .unwrap()
            .pearson
            .clamp(0.0, 1.0);
        let yv = y.clone();
        let numeric = finite_difference(
            |x| {
                let b = batch_of(x, &yv);
                beta * mae(&b).unwrap().item()
                    + (1.0 - beta) * loss_diffnorm(&b, DEFAULT_EPS).unwrap().item()
            },
            &f,
            1e-5,
        );
        assert_grad_close(&analytic, &numeric, 1e-5, 1e-8);
    }
}

#[test]
fn metrics_cross_module_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let n = rng.gen_range(2..=64);
        let f = random_vec(&mut rng, n, -5.0, 5.0);
        let y = random_vec(&mut rng, n, -5.0, 5.0);
        let report = evaluate(&Tensor::vector(f.clone()), &Tensor::vector(y.clone())).unwrap();
        let b = batch_of(&f, &y);

        // pearson agrees with 1 - loss_diffnorm on the eps = 0 path
        let dn = loss_diffnorm(&b, 0.0).unwrap().item();
        assert!((report.pearson - (1.0 - dn)).abs() < 1e-10);

        // rmse^2 agrees with the mse loss
        let m = mse(&b).unwrap().item();
        assert!(rel_err(report.rmse * report.rmse, m) < 1e-12);

        // per-target rmse >= mae
        for t in &report.per_target {
            assert!(t.rmse >= t.mae - 1e-12);
        }
    }
}

/// Aggregating only the MAE sub-loss minimizes the same objective as plain
/// MAE (log is monotone): on a one-parameter convex problem both trajectories
/// settle at the same minimizer.
#[test]
fn gar_mae_only_same_argmin_as_mae() {
    use gar_core::aggregate::{gar_kl, GarConfig};

    let y = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
    let train = |use_gar: bool| -> f64 {
        let mut theta = 0.0f64;
        for _ in 0..4000 {
            let pred = Var::leaf(Tensor::vector(vec![theta; 4]));
            let batch = Batch::new(pred.clone(), y.clone()).unwrap();
            let loss = if use_gar {
                let sub = mae(&batch).unwrap();
                gar_kl(&[sub], &GarConfig::with_mask(1.0, vec![true])).unwrap()
            } else {
                mae(&batch).unwrap()
            };
            backward(&loss).unwrap();
            let g = pred.grad().unwrap().data().iter().sum::<f64>();
            theta -= 0.01 * g.signum() * 0.05 + 0.01 * g.clamp(-1.0, 1.0);
        }
        theta
    };
    let t_mae = train(false);
    let t_gar = train(true);
    // the MAE argmin over a constant predictor is any median of y: [2, 3]
    assert!((2.0..=3.0).contains(&t_mae), "mae argmin {t_mae}");
    assert!((2.0..=3.0).contains(&t_gar), "gar argmin {t_gar}");
    assert!((t_mae - t_gar).abs() < 0.1, "{t_mae} vs {t_gar}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Equivalence of the two routes on arbitrary small batches.
    #[test]
    fn prop_variance_route_equivalence(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..40)
    ) {
        let f: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let fast = loss_diff(&batch_of(&f, &y)).unwrap().item();
        let slow = pairwise_diff_quadratic(&Tensor::vector(f), &Tensor::vector(y));
        prop_assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1e-12));
    }

    /// The normalized pairwise loss never leaves [0, 2] (up to eps slack).
    #[test]
    fn prop_diffnorm_range(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40)
    ) {
        let f: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let v = loss_diffnorm(&batch_of(&f, &y), DEFAULT_EPS).unwrap().item();
        prop_assert!((-1e-9..=2.0 + 1e-9).contains(&v));
    }
}
