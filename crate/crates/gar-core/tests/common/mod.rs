//! Shared test oracles: central finite differences and random batch
//! generation. Kept independent of the library's gradient path.

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

/// Central finite-difference gradient of a scalar function.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let hi = f(&xp);
        xp[i] = orig - h;
        let lo = f(&xp);
        xp[i] = orig;
        g.push((hi - lo) / (2.0 * h));
    }
    g
}

/// Checks an analytic gradient against central differences with a relative
/// tolerance and an absolute floor near zero.
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let denom = a.abs().max(n.abs());
        let err = (a - n).abs();
        assert!(
            err <= abs_tol || err / denom <= rel_tol,
            "gradient mismatch at {i}: analytic {a}, numeric {n}, rel {}",
            err / denom
        );
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    let denom = want.abs().max(1e-300);
    (got - want).abs() / denom
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let dist = Uniform::new(lo, hi);
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Random values bounded away from the kinks of |.| at `avoid` distance, so
/// finite differences of piecewise losses stay valid.
pub fn random_vec_away_from(
    rng: &mut ChaCha8Rng,
    base: &[f64],
    lo: f64,
    hi: f64,
    kinks: &[f64],
    avoid: f64,
) -> Vec<f64> {
    let dist = Uniform::new(lo, hi);
    base.iter()
        .map(|&b| {
            loop {
                let v = dist.sample(rng);
                let e = v - b;
                if kinks.iter().all(|&k| (e.abs() - k).abs() > avoid) && e.abs() > avoid {
                    return v;
                }
            }
        })
        .collect()
}
