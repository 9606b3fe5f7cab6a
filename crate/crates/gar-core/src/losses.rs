//! Regression losses: conventional pointwise losses plus two pairwise
//! label-difference losses in both definitional (quadratic-time, value-only)
//! and efficient (linear-time, differentiable) forms.
//!
//! The quadratic forms exist to validate the linear forms and for timing
//! comparisons; training always goes through the linear forms.

use crate::autodiff::Var;
use crate::error::{GarError, Result};
use crate::tensor::Tensor;

/// Epsilon used inside the variance square roots of the normalized pairwise
/// loss so constant batches stay finite during training.
pub const DEFAULT_EPS: f64 = 1e-12;

/// Aligned predictions/targets for one mini-batch, possibly multi-target.
///
/// Predictions stay attached to their computation graph; targets are a
/// constant leaf.
pub struct Batch {
    predictions: Var,
    targets: Var,
}

impl Batch {
    /// Wrap a prediction node and ground-truth tensor. Rank-1 inputs are
    /// treated as single-target [N x 1].
    pub fn new(predictions: Var, targets: Tensor) -> Result<Batch> {
        let pv = predictions.value();
        let pm = pv.as_matrix();
        let tm = targets.as_matrix();
        if pm.shape() != tm.shape() {
            return Err(GarError::ShapeMismatch {
                expected: pm.shape().to_vec(),
                got: tm.shape().to_vec(),
            });
        }
        if pm.rows() == 0 {
            return Err(GarError::EmptyTensor { op: "batch" });
        }
        if !pm.all_finite() || !tm.all_finite() {
            return Err(GarError::Domain {
                op: "batch",
                detail: "non-finite entries".into(),
            });
        }
        // Reshape-free path when already rank 2; otherwise lift to [N x 1].
        let predictions = if pv.shape().len() == 2 {
            predictions
        } else {
            reshape_to_matrix(&predictions, pm.rows())?
        };
        Ok(Batch {
            predictions,
            targets: Var::leaf(tm),
        })
    }

    /// Batch from plain tensors (predictions become a graph leaf).
    pub fn from_values(predictions: Tensor, targets: Tensor) -> Result<Batch> {
        Batch::new(Var::leaf(predictions), targets)
    }

    pub fn n(&self) -> usize {
        self.predictions.shape()[0]
    }

    pub fn t(&self) -> usize {
        self.predictions.shape()[1]
    }

    pub fn predictions(&self) -> &Var {
        &self.predictions
    }

    pub fn targets(&self) -> &Var {
        &self.targets
    }
}

/// [N] -> [N x 1] with pass-through gradient.
fn reshape_to_matrix(v: &Var, n: usize) -> Result<Var> {
    // A length-preserving reshape is an identity on the data; express it as
    // sum over a single column selection-free path: multiply by 1 keeps the
    // graph edge and lets us swap the tensor shape.
    let t = v.value();
    let reshaped = Tensor::matrix(n, 1, t.data().to_vec())?;
    let parent = v.clone();
    let shape = t.shape().to_vec();
    let back = Box::new(move |up: &Tensor| {
        let g = Tensor::new(shape.clone(), up.data().to_vec()).expect("same length");
        parent.accumulate_grad(&g);
    });
    Ok(Var::from_op(reshaped, vec![v.clone()], back))
}

/// The three sub-losses plus diagnostic statistics for one batch.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub l_mae: f64,
    pub l_diff: f64,
    pub l_diffnorm: f64,
    pub mean_error: f64,
    pub error_variance: f64,
    pub pearson: f64,
}

/// Dense pairwise-difference vectors for one target column. Quadratic in
/// memory; only used to pin down the definitional form at small N.
pub struct PairwiseForm {
    pub df: Vec<f64>,
    pub dy: Vec<f64>,
    pub p: u32,
}

impl PairwiseForm {
    pub fn from_columns(f: &[f64], y: &[f64]) -> PairwiseForm {
        let n = f.len();
        let mut df = Vec::with_capacity(n * n);
        let mut dy = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                df.push(f[i] - f[j]);
                dy.push(y[i] - y[j]);
            }
        }
        PairwiseForm { df, dy, p: 2 }
    }
}

fn average_over_targets(
    batch: &Batch,
    f: impl Fn(&Var, &Var) -> Result<Var>,
) -> Result<Var> {
    let t = batch.t();
    if t == 1 {
        return f(&batch.predictions, &batch.targets);
    }
    let mut acc: Option<Var> = None;
    for j in 0..t {
        let fj = batch.predictions.select_column(j)?;
        let yj = batch.targets.select_column(j)?;
        let lj = f(&fj, &yj)?;
        acc = Some(match acc {
            Some(a) => a.add(&lj)?,
            None => lj,
        });
    }
    Ok(acc.expect("t >= 1").mul_const(1.0 / t as f64))
}

/// Mean absolute error over all N*T entries.
pub fn mae(batch: &Batch) -> Result<Var> {
    batch.predictions.sub(&batch.targets)?.abs().mean()
}

/// Mean squared error over all N*T entries.
pub fn mse(batch: &Batch) -> Result<Var> {
    batch.predictions.sub(&batch.targets)?.square().mean()
}

/// Mean Huber loss with switching parameter `delta`.
pub fn huber(batch: &Batch, delta: f64) -> Result<Var> {
    batch
        .predictions
        .sub(&batch.targets)?
        .huber_elem(delta)?
        .mean()
}

/// Pairwise label-difference loss in its efficient linear-time form: the
/// biased (divide-by-N) variance of prediction errors, averaged over targets.
pub fn loss_diff(batch: &Batch) -> Result<Var> {
    average_over_targets(batch, |f, y| {
        let delta = f.sub(y)?;
        let centered = delta.sub(&delta.mean()?)?;
        centered.square().mean()
    })
}

/// Normalized pairwise loss in its efficient form:
/// 1 - Cov(f,y) / sqrt((Var(f)+eps)(Var(y)+eps)), averaged over targets.
///
/// `eps = 0` recovers the exact 1 - Pearson identity on non-degenerate
/// batches; a positive eps keeps constant batches finite during training.
pub fn loss_diffnorm(batch: &Batch, eps: f64) -> Result<Var> {
    if batch.n() < 2 {
        return Err(GarError::Domain {
            op: "loss_diffnorm",
            detail: "needs at least two samples".into(),
        });
    }
    average_over_targets(batch, |f, y| {
        // target-side statistics are constants
        let yv = y.value();
        let n = yv.len() as f64;
        let mu_y: f64 = yv.data().iter().sum::<f64>() / n;
        let yc: Vec<f64> = yv.data().iter().map(|&v| v - mu_y).collect();
        let var_y: f64 = yc.iter().map(|v| v * v).sum::<f64>() / n;
        let yc_const = Var::leaf(Tensor::new(yv.shape().to_vec(), yc).expect("same shape"));

        let fc = f.sub(&f.mean()?)?;
        let var_f = fc.square().mean()?;
        let cov = fc.mul(&yc_const)?.mean()?;
        let denom = var_f.add_const(eps).mul_const(var_y + eps).sqrt()?;
        let rho = cov.div(&denom)?;
        Ok(rho.neg().add_const(1.0))
    })
}

/// Splits MSE into (error variance, squared mean error), averaged per target.
/// The two components always sum to `mse`.
pub fn mse_decomposition(batch: &Batch) -> (f64, f64) {
    let pv = batch.predictions.value();
    let tv = batch.targets.value();
    let (n, t) = (pv.shape()[0], pv.shape()[1]);
    let mut var_acc = 0.0;
    let mut sq_mean_acc = 0.0;
    for j in 0..t {
        let mut mean = 0.0;
        for i in 0..n {
            mean += pv.data()[i * t + j] - tv.data()[i * t + j];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let d = pv.data()[i * t + j] - tv.data()[i * t + j] - mean;
            var += d * d;
        }
        var /= n as f64;
        var_acc += var;
        sq_mean_acc += mean * mean;
    }
    (var_acc / t as f64, sq_mean_acc / t as f64)
}

/// MAE fused with the normalized pairwise loss through a dynamic weight:
/// beta * MAE + (1 - beta) * L_diffnorm, where beta is the current Pearson
/// correlation clamped to [0, 1] and detached from gradient flow.
pub fn mae_pearson_fused(batch: &Batch) -> Result<Var> {
    if batch.n() < 2 {
        return Err(GarError::Domain {
            op: "mae_pearson_fused",
            detail: "needs at least two samples".into(),
        });
    }
    let breakdown = breakdown_values(&batch.predictions.value(), &batch.targets.value())?;
    let beta = breakdown.pearson.clamp(0.0, 1.0);
    let l_mae = mae(batch)?.mul_const(beta);
    let l_dn = loss_diffnorm(batch, DEFAULT_EPS)?.mul_const(1.0 - beta);
    l_mae.add(&l_dn)
}

// ---------------------------------------------------------------------------
// quadratic-time oracles (value-only)
// ---------------------------------------------------------------------------

struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn new() -> Kahan {
        Kahan { sum: 0.0, c: 0.0 }
    }

    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Definitional pairwise difference loss with half-squared error:
/// (1/N^2) sum_i sum_j 0.5 [(f_i - f_j) - (y_i - y_j)]^2, per target then
/// averaged. O(N^2), no gradients.
pub fn pairwise_diff_quadratic(pred: &Tensor, targets: &Tensor) -> f64 {
    let pm = pred.as_matrix();
    let tm = targets.as_matrix();
    let (n, t) = (pm.shape()[0], pm.shape()[1]);
    let mut acc = 0.0;
    for col in 0..t {
        let mut s = Kahan::new();
        for i in 0..n {
            let fi = pm.data()[i * t + col];
            let yi = tm.data()[i * t + col];
            for j in 0..n {
                let d = (fi - pm.data()[j * t + col]) - (yi - tm.data()[j * t + col]);
                s.add(0.5 * d * d);
            }
        }
        acc += s.sum / (n * n) as f64;
    }
    acc / t as f64
}

/// Definitional normalized pairwise loss at p = 2: half the squared distance
/// between the unit-normalized pairwise-difference vectors, which equals
/// 1 - Pearson. O(N^2) over raw pairwise differences, no gradients.
pub fn pairwise_diffnorm_quadratic(pred: &Tensor, targets: &Tensor) -> Result<f64> {
    let pm = pred.as_matrix();
    let tm = targets.as_matrix();
    let (n, t) = (pm.shape()[0], pm.shape()[1]);
    if n < 2 {
        return Err(GarError::DegenerateBatch(
            "pairwise form needs at least two samples".into(),
        ));
    }
    let mut acc = 0.0;
    for col in 0..t {
        let mut s_ff = Kahan::new();
        let mut s_yy = Kahan::new();
        let mut s_fy = Kahan::new();
        for i in 0..n {
            let fi = pm.data()[i * t + col];
            let yi = tm.data()[i * t + col];
            for j in 0..n {
                let df = fi - pm.data()[j * t + col];
                let dy = yi - tm.data()[j * t + col];
                s_ff.add(df * df);
                s_yy.add(dy * dy);
                s_fy.add(df * dy);
            }
        }
        if s_ff.sum == 0.0 || s_yy.sum == 0.0 {
            return Err(GarError::DegenerateBatch(
                "pairwise difference vector has zero norm".into(),
            ));
        }
        // 0.5 * || df/|df| - dy/|dy| ||^2 = 1 - <df, dy>/(|df||dy|)
        acc += 1.0 - s_fy.sum / (s_ff.sum.sqrt() * s_yy.sum.sqrt());
    }
    Ok(acc / t as f64)
}

/// Value-only diagnostics for a prediction/target pair (per-target averages).
pub fn breakdown_values(pred: &Tensor, targets: &Tensor) -> Result<LossBreakdown> {
    let pm = pred.as_matrix();
    let tm = targets.as_matrix();
    if pm.shape() != tm.shape() {
        return Err(GarError::ShapeMismatch {
            expected: pm.shape().to_vec(),
            got: tm.shape().to_vec(),
        });
    }
    let (n, t) = (pm.shape()[0], pm.shape()[1]);
    if n == 0 {
        return Err(GarError::EmptyTensor { op: "breakdown" });
    }
    let nf = n as f64;
    let mut l_mae = 0.0;
    let mut mean_error = 0.0;
    let mut error_variance = 0.0;
    let mut pearson = 0.0;
    for col in 0..t {
        let mut abs_sum = 0.0;
        let mut d_sum = 0.0;
        let mut f_sum = 0.0;
        let mut y_sum = 0.0;
        for i in 0..n {
            let f = pm.data()[i * t + col];
            let y = tm.data()[i * t + col];
            abs_sum += (f - y).abs();
            d_sum += f - y;
            f_sum += f;
            y_sum += y;
        }
        let (d_mean, f_mean, y_mean) = (d_sum / nf, f_sum / nf, y_sum / nf);
        let mut d_var = 0.0;
        let mut f_var = 0.0;
        let mut y_var = 0.0;
        let mut cov = 0.0;
        for i in 0..n {
            let f = pm.data()[i * t + col];
            let y = tm.data()[i * t + col];
            let dd = f - y - d_mean;
            d_var += dd * dd;
            f_var += (f - f_mean) * (f - f_mean);
            y_var += (y - y_mean) * (y - y_mean);
            cov += (f - f_mean) * (y - y_mean);
        }
        d_var /= nf;
        f_var /= nf;
        y_var /= nf;
        cov /= nf;
        l_mae += abs_sum / nf;
        mean_error += d_mean;
        error_variance += d_var;
        pearson += cov / ((f_var + DEFAULT_EPS) * (y_var + DEFAULT_EPS)).sqrt();
    }
    let tf = t as f64;
    let pearson = pearson / tf;
    Ok(LossBreakdown {
        l_mae: l_mae / tf,
        l_diff: error_variance / tf,
        l_diffnorm: 1.0 - pearson,
        mean_error: mean_error / tf,
        error_variance: error_variance / tf,
        pearson,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;

    fn batch1(f: &[f64], y: &[f64]) -> Batch {
        Batch::from_values(Tensor::vector(f.to_vec()), Tensor::vector(y.to_vec())).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&batch1(&[1.0, 2.0], &[1.0, 2.0])).unwrap().item(), 0.0);
        assert_eq!(
            mae(&batch1(&[3.0, 1.0, 4.0, 1.0], &[2.0, 2.0, 3.0, 2.0]))
                .unwrap()
                .item(),
            1.0
        );
        assert_eq!(mae(&batch1(&[0.0], &[5.0])).unwrap().item(), 5.0);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&batch1(&[1.0, 2.0], &[1.0, 2.0])).unwrap().item(), 0.0);
        assert_eq!(
            mse(&batch1(&[3.0, 1.0, 4.0, 1.0], &[2.0, 2.0, 3.0, 2.0]))
                .unwrap()
                .item(),
            1.0
        );
        assert_eq!(mse(&batch1(&[0.0], &[3.0])).unwrap().item(), 9.0);
    }

    #[test]
    fn huber_examples() {
        // quadratic branch
        assert_eq!(
            huber(&batch1(&[0.5], &[0.0]), 1.0).unwrap().item(),
            0.125
        );
        // linear branch: 1 * (2 - 0.5)
        assert_eq!(huber(&batch1(&[2.0], &[0.0]), 1.0).unwrap().item(), 1.5);
        // continuity at e == delta
        let at_knee = huber(&batch1(&[1.0], &[0.0]), 1.0).unwrap().item();
        assert!((at_knee - 0.5).abs() < 1e-15);
        assert!(huber(&batch1(&[1.0], &[0.0]), 0.0).is_err());
    }

    #[test]
    fn pairwise_diff_quadratic_examples() {
        let f = Tensor::vector(vec![3.0, 1.0, 4.0, 1.0]);
        let y = Tensor::vector(vec![2.0, 2.0, 3.0, 2.0]);
        assert!((pairwise_diff_quadratic(&f, &y) - 1.0).abs() < 1e-12);

        // constant error cancels pairwise
        let f = Tensor::vector(vec![5.0, 6.0, 7.0]);
        let y = Tensor::vector(vec![2.0, 3.0, 4.0]);
        assert_eq!(pairwise_diff_quadratic(&f, &y), 0.0);

        // N = 1: only the i == j pair
        let f = Tensor::vector(vec![9.0]);
        let y = Tensor::vector(vec![1.0]);
        assert_eq!(pairwise_diff_quadratic(&f, &y), 0.0);
    }

    #[test]
    fn loss_diff_examples() {
        let b = batch1(&[3.0, 1.0, 4.0, 1.0], &[2.0, 2.0, 3.0, 2.0]);
        assert!((loss_diff(&b).unwrap().item() - 1.0).abs() < 1e-15);

        // constant error has zero variance
        let b = batch1(&[8.0, 9.0, 10.0], &[1.0, 2.0, 3.0]);
        assert!(loss_diff(&b).unwrap().item().abs() < 1e-15);
    }

    #[test]
    fn pairwise_diffnorm_examples() {
        // positive affine transform is removed by normalization
        let y = vec![1.0, 2.0, 5.0, -3.0];
        let f: Vec<f64> = y.iter().map(|v| 2.0 * v + 5.0).collect();
        let v = pairwise_diffnorm_quadratic(&Tensor::vector(f), &Tensor::vector(y.clone()))
            .unwrap();
        assert!(v.abs() < 1e-12);

        // antipodal unit vectors
        let f: Vec<f64> = y.iter().map(|v| -v).collect();
        let v = pairwise_diffnorm_quadratic(&Tensor::vector(f), &Tensor::vector(y)).unwrap();
        assert!((v - 2.0).abs() < 1e-12);

        let v = pairwise_diffnorm_quadratic(
            &Tensor::vector(vec![1.0, 2.0, 3.0]),
            &Tensor::vector(vec![1.0, 3.0, 2.0]),
        )
        .unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        // degenerate: constant predictions
        assert!(pairwise_diffnorm_quadratic(
            &Tensor::vector(vec![1.0, 1.0]),
            &Tensor::vector(vec![1.0, 2.0])
        )
        .is_err());
    }

    #[test]
    fn loss_diffnorm_examples() {
        let b = batch1(&[0.5, 1.25, 3.0], &[0.5, 1.25, 3.0]);
        assert!(loss_diffnorm(&b, DEFAULT_EPS).unwrap().item() < 1e-9);

        let b = batch1(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]);
        assert!((loss_diffnorm(&b, 0.0).unwrap().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loss_diffnorm_rejects_single_sample() {
        assert!(loss_diffnorm(&batch1(&[1.0], &[2.0]), 0.0).is_err());
    }

    #[test]
    fn mse_decomposition_examples() {
        // delta = (1,-1,1,-1) -> (1, 0)
        let b = batch1(&[1.0, -1.0, 1.0, -1.0], &[0.0, 0.0, 0.0, 0.0]);
        let (var, sq) = mse_decomposition(&b);
        assert_eq!((var, sq), (1.0, 0.0));
        assert_eq!(mse(&b).unwrap().item(), var + sq);

        // delta = (1,1,1,1) -> (0, 1)
        let b = batch1(&[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(mse_decomposition(&b), (0.0, 1.0));
    }

    #[test]
    fn mae_pearson_fused_examples() {
        // perfect fit: loss = MAE = 0 (up to eps slack)
        let b = batch1(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(mae_pearson_fused(&b).unwrap().item() < 1e-9);

        // anti-correlated: beta clamps to 0, loss = L_diffnorm only
        let b = batch1(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]);
        let fused = mae_pearson_fused(&b).unwrap().item();
        let dn = loss_diffnorm(&b, DEFAULT_EPS).unwrap().item();
        assert!((fused - dn).abs() < 1e-12);

        // beta = 0.5, MAE = 2/3, L_dn = 0.5 -> 7/12
        let b = batch1(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]);
        assert!((mae_pearson_fused(&b).unwrap().item() - 7.0 / 12.0).abs() < 1e-9);
    }

    #[test]
    fn pairwise_form_invariants() {
        let pf = PairwiseForm::from_columns(&[1.0, 4.0, 2.0], &[0.0, 1.0, -1.0]);
        let n = 3;
        for i in 0..n {
            assert_eq!(pf.df[i * n + i], 0.0);
            assert_eq!(pf.dy[i * n + i], 0.0);
            for j in 0..n {
                assert_eq!(pf.df[i * n + j], -pf.df[j * n + i]);
            }
        }
        assert_eq!(pf.p, 2);
    }

    #[test]
    fn losses_are_differentiable() {
        let pred = Var::leaf(Tensor::vector(vec![0.4, -1.0, 2.0, 0.1]));
        let b = Batch::new(pred.clone(), Tensor::vector(vec![0.0, 1.0, 2.0, -1.0])).unwrap();
        for loss in [
            mae(&b).unwrap(),
            mse(&b).unwrap(),
            huber(&b, 1.0).unwrap(),
            loss_diff(&b).unwrap(),
            loss_diffnorm(&b, DEFAULT_EPS).unwrap(),
            mae_pearson_fused(&b).unwrap(),
        ] {
            backward(&loss).unwrap();
            let g = pred.grad().unwrap();
            assert!(g.all_finite());
        }
    }

    #[test]
    fn multi_target_averages_columns() {
        // two identical columns: loss equals the single-column loss
        let f = Tensor::matrix(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let y = Tensor::matrix(3, 2, vec![1.0, 1.0, 3.0, 3.0, 2.0, 2.0]).unwrap();
        let b2 = Batch::from_values(f, y).unwrap();
        let b1 = batch1(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]);
        let d2 = loss_diff(&b2).unwrap().item();
        let d1 = loss_diff(&b1).unwrap().item();
        assert!((d2 - d1).abs() < 1e-15);
        let n2 = loss_diffnorm(&b2, 0.0).unwrap().item();
        assert!((n2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn breakdown_consistency() {
        let f = Tensor::vector(vec![3.0, 1.0, 4.0, 1.0]);
        let y = Tensor::vector(vec![2.0, 2.0, 3.0, 2.0]);
        let bd = breakdown_values(&f, &y).unwrap();
        assert_eq!(bd.l_diff, bd.error_variance);
        assert!((bd.l_diffnorm - (1.0 - bd.pearson)).abs() < 1e-15);
        assert_eq!(bd.l_mae, 1.0);
        assert_eq!(bd.mean_error, 0.0);
        assert_eq!(bd.error_variance, 1.0);
    }
}
