//! SGD-with-momentum and Adam, stage-wise learning-rate decay, and the
//! mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{gar_kl, GarConfig};
use crate::autodiff::{backward, Var};
use crate::datasets::Dataset;
use crate::error::{GarError, Result};
use crate::losses::{self, Batch, DEFAULT_EPS};
use crate::network::{forward, init, NetworkSpec, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mae,
    Mse,
    Huber(f64),
    MaePearson,
    Gar(GarConfig),
}

impl LossKind {
    /// True when the loss needs at least two samples per batch.
    pub fn needs_pairs(&self) -> bool {
        match self {
            LossKind::Mae | LossKind::Mse | LossKind::Huber(_) => false,
            LossKind::MaePearson => true,
            // a GAR mask with only the pointwise loss enabled stays pointwise
            LossKind::Gar(cfg) => cfg.enabled.iter().skip(1).any(|&e| e),
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}

fn default_adam_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_adam_eps() -> f64 {
    1e-8
}

fn default_decay_factor() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_adam_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(GarError::InvalidConfig(format!(
                "lr0 must be > 0, got {}",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(GarError::InvalidConfig(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(GarError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.loss_kind.needs_pairs() && self.batch_size < 2 {
            return Err(GarError::InvalidConfig(
                "pairwise losses need batch_size >= 2".into(),
            ));
        }
        if let LossKind::Gar(cfg) = &self.loss_kind {
            cfg.validate()?;
        }
        if let LossKind::Huber(delta) = self.loss_kind {
            if !(delta > 0.0) {
                return Err(GarError::InvalidConfig(format!(
                    "huber delta must be > 0, got {delta}"
                )));
            }
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch index: lr0 * factor^(milestones passed).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let k = self
            .lr_decay_epochs
            .iter()
            .filter(|&&m| epoch >= m)
            .count() as i32;
        self.lr0 * self.lr_decay_factor.powi(k)
    }
}

#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(n: usize) -> SgdState {
        SgdState {
            velocity: vec![0.0; n],
        }
    }
}

/// v <- momentum * v + (g + wd * theta); theta <- theta - lr * v
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(GarError::ShapeMismatch {
            expected: vec![params.len()],
            got: vec![grads.len(), state.velocity.len()],
        });
    }
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        state.velocity[i] = momentum * state.velocity[i] + g;
        params[i] -= lr * state.velocity[i];
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Bias-corrected Adam with L2-style weight decay folded into the gradient.
/// `t` is the 1-based step index.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
    t: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(GarError::ShapeMismatch {
            expected: vec![params.len()],
            got: vec![grads.len(), state.m.len()],
        });
    }
    if t == 0 {
        return Err(GarError::InvalidConfig("adam step index starts at 1".into()));
    }
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub mean_error: f64,
    pub error_std: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
    pub skipped_batches: usize,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,lr,mean_error,error_std\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.lr, r.mean_error, r.error_std
            ));
        }
        s
    }
}

/// Build the configured training loss for one batch.
fn batch_loss(batch: &Batch, kind: &LossKind) -> Result<Var> {
    match kind {
        LossKind::Mae => losses::mae(batch),
        LossKind::Mse => losses::mse(batch),
        LossKind::Huber(delta) => losses::huber(batch, *delta),
        LossKind::MaePearson => losses::mae_pearson_fused(batch),
        LossKind::Gar(cfg) => {
            let mut subs = Vec::with_capacity(3);
            for (i, &on) in cfg.enabled.iter().enumerate() {
                let l = if !on {
                    Var::scalar(0.0) // filtered out by the mask
                } else {
                    match i {
                        0 => losses::mae(batch)?,
                        1 => losses::loss_diff(batch)?,
                        2 => losses::loss_diffnorm(batch, DEFAULT_EPS)?,
                        _ => {
                            return Err(GarError::InvalidConfig(
                                "gar mask has more than three entries".into(),
                            ))
                        }
                    }
                };
                subs.push(l);
            }
            gar_kl(&subs, cfg)
        }
    }
}

enum OptimState {
    Sgd(SgdState),
    Adam(AdamState),
}

/// Mini-batch training; returns the final parameters and the per-epoch trace.
pub fn train(
    data: &Dataset,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<(ParameterStore, TrainingTrace)> {
    train_with_callback(data, spec, cfg, |_, _| {})
}

/// Like [`train`], invoking `on_epoch_end(epoch, params)` after every epoch
/// (used for per-epoch validation during model selection).
pub fn train_with_callback(
    data: &Dataset,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    mut on_epoch_end: impl FnMut(usize, &ParameterStore),
) -> Result<(ParameterStore, TrainingTrace)> {
    cfg.validate()?;
    spec.validate()?;
    if data.d() != spec.input_dim || data.t() != spec.output_dim {
        return Err(GarError::InvalidConfig(format!(
            "network {}->{} does not match data {}->{}",
            spec.input_dim,
            spec.output_dim,
            data.d(),
            data.t()
        )));
    }
    let mut params = init(spec, cfg.seed)?;
    let mut state = match cfg.optimizer {
        OptimizerKind::SgdMomentum => OptimState::Sgd(SgdState::new(params.len())),
        OptimizerKind::Adam => OptimState::Adam(AdamState::new(params.len())),
    };
    let needs_pairs = cfg.loss_kind.needs_pairs();
    let mut trace = TrainingTrace::default();
    let mut adam_t: u64 = 0;

    let n = data.n();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch as u64));

        let mut loss_sum = 0.0;
        let mut mean_err_sum = 0.0;
        let mut err_std_sum = 0.0;
        let mut batches = 0usize;
        for chunk in idx.chunks(cfg.batch_size) {
            if chunk.len() < 2 && needs_pairs {
                trace.skipped_batches += 1;
                continue;
            }
            let xb = data.features.gather_rows(chunk)?;
            let yb = data.targets.gather_rows(chunk)?;
            let pass = forward(&params, spec, &xb)?;
            let bd = losses::breakdown_values(&pass.output.value(), &yb)?;
            let batch = Batch::new(pass.output.clone(), yb)?;
            let loss = batch_loss(&batch, &cfg.loss_kind)?;
            backward(&loss)?;
            let grads = pass.flat_gradient();
            match &mut state {
                OptimState::Sgd(s) => sgd_momentum_step(
                    params.data_mut(),
                    &grads,
                    s,
                    lr,
                    cfg.momentum,
                    cfg.weight_decay,
                )?,
                OptimState::Adam(s) => {
                    adam_t += 1;
                    adam_step(
                        params.data_mut(),
                        &grads,
                        s,
                        lr,
                        cfg.adam_betas,
                        cfg.adam_eps,
                        cfg.weight_decay,
                        adam_t,
                    )?;
                }
            }
            loss_sum += loss.item();
            mean_err_sum += bd.mean_error;
            err_std_sum += bd.error_variance.sqrt();
            batches += 1;
        }
        let bf = batches.max(1) as f64;
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / bf,
            lr,
            mean_error: mean_err_sum / bf,
            error_std: err_std_sum / bf,
        });
        on_epoch_end(epoch, &params);
    }
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn plain_sgd_when_momentum_zero() {
        let mut p = vec![1.0, -2.0];
        let g = vec![0.5, 0.25];
        let mut s = SgdState::new(2);
        sgd_momentum_step(&mut p, &g, &mut s, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![0.95, -2.025]);
    }

    #[test]
    fn momentum_two_steps_hand_computed() {
        // theta=1, g=1, lr=0.1, m=0.9: v1=1, theta1=0.9; v2=1.9, theta2=0.71
        let mut p = vec![1.0];
        let mut s = SgdState::new(1);
        sgd_momentum_step(&mut p, &[1.0], &mut s, 0.1, 0.9, 0.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        sgd_momentum_step(&mut p, &[1.0], &mut s, 0.1, 0.9, 0.0).unwrap();
        assert!((p[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_zero_velocity_fixed_point() {
        let mut p = vec![3.0];
        let mut s = SgdState::new(1);
        sgd_momentum_step(&mut p, &[0.0], &mut s, 0.5, 0.9, 0.0).unwrap();
        assert_eq!(p, vec![3.0]);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut p = vec![1.0];
        let mut s = SgdState::new(2);
        assert!(sgd_momentum_step(&mut p, &[1.0], &mut s, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn adam_first_step_close_to_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1e-3, (0.9, 0.999), 1e-8, 0.0, 1).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-6, "step was {}", p[0]);
    }

    #[test]
    fn adam_zero_gradient_fixed_point() {
        let mut p = vec![2.5];
        let mut s = AdamState::new(1);
        for t in 1..=10 {
            adam_step(&mut p, &[0.0], &mut s, 0.1, (0.9, 0.999), 1e-8, 0.0, t).unwrap();
        }
        assert_eq!(p, vec![2.5]);
    }

    #[test]
    fn adam_two_steps_match_hand_arithmetic() {
        let (b1, b2) = (0.9, 0.999);
        let (lr, eps) = (0.01, 1e-8);
        let gs = [0.3, -0.2];
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        // independent scalar recurrence
        let (mut m, mut v, mut theta) = (0.0, 0.0, 1.0);
        for (i, &g) in gs.iter().enumerate() {
            let t = (i + 1) as u64;
            adam_step(&mut p, &[g], &mut s, lr, (b1, b2), eps, 0.0, t).unwrap();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p[0] - theta).abs() < 1e-12);
    }

    #[test]
    fn lr_schedule_exact_powers() {
        let cfg = TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            lr0: 0.1,
            momentum: 0.9,
            adam_betas: default_adam_betas(),
            adam_eps: default_adam_eps(),
            weight_decay: 0.0,
            epochs: 100,
            batch_size: 32,
            lr_decay_epochs: vec![50, 75],
            lr_decay_factor: 0.1,
            seed: 0,
            loss_kind: LossKind::Mae,
        };
        assert_eq!(cfg.lr_at_epoch(0), 0.1);
        assert_eq!(cfg.lr_at_epoch(49), 0.1);
        assert_eq!(cfg.lr_at_epoch(50), 0.1 * 0.1f64.powi(1));
        assert_eq!(cfg.lr_at_epoch(74), 0.1 * 0.1f64.powi(1));
        assert_eq!(cfg.lr_at_epoch(75), 0.1 * 0.1f64.powi(2));
        assert_eq!(cfg.lr_at_epoch(99), 0.1 * 0.1f64.powi(2));
    }

    fn line_dataset(n: usize) -> Dataset {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        Dataset::new(
            Tensor::matrix(n, 1, xs).unwrap(),
            Tensor::matrix(n, 1, ys).unwrap(),
            vec!["x".into()],
            vec!["y".into()],
        )
        .unwrap()
    }

    fn base_cfg(loss: LossKind) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            lr0: 0.05,
            momentum: 0.0,
            adam_betas: default_adam_betas(),
            adam_eps: default_adam_eps(),
            weight_decay: 0.0,
            epochs: 10,
            batch_size: 64,
            lr_decay_epochs: vec![],
            lr_decay_factor: 0.1,
            seed: 7,
            loss_kind: loss,
        }
    }

    #[test]
    fn zero_epochs_keeps_init() {
        let data = line_dataset(16);
        let spec = NetworkSpec::new(1, vec![], 1);
        let mut cfg = base_cfg(LossKind::Mse);
        cfg.epochs = 0;
        let (p, trace) = train(&data, &spec, &cfg).unwrap();
        assert_eq!(p, init(&spec, cfg.seed).unwrap());
        assert!(trace.epochs.is_empty());
    }

    #[test]
    fn mse_on_line_strictly_decreases() {
        let data = line_dataset(64);
        let spec = NetworkSpec::new(1, vec![], 1);
        let (_, trace) = train(&data, &spec, &base_cfg(LossKind::Mse)).unwrap();
        for w in trace.epochs.windows(2) {
            assert!(
                w[1].train_loss < w[0].train_loss,
                "loss rose: {} -> {}",
                w[0].train_loss,
                w[1].train_loss
            );
        }
    }

    #[test]
    fn identical_seeds_bit_identical_params() {
        let data = line_dataset(32);
        let spec = NetworkSpec::new(1, vec![4], 1);
        let cfg = base_cfg(LossKind::Gar(GarConfig::new(1.0)));
        let (p1, _) = train(&data, &spec, &cfg).unwrap();
        let (p2, _) = train(&data, &spec, &cfg).unwrap();
        for (a, b) in p1.data().iter().zip(p2.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn gar_descends_on_linear_data() {
        let data = line_dataset(64);
        let spec = NetworkSpec::new(1, vec![8], 1);
        let mut cfg = base_cfg(LossKind::Gar(GarConfig::new(0.5)));
        cfg.epochs = 40;
        cfg.lr0 = 0.02;
        let (params, _) = train(&data, &spec, &cfg).unwrap();
        let init_params = init(&spec, cfg.seed).unwrap();
        let before = crate::losses::breakdown_values(
            &crate::network::predict(&init_params, &spec, &data.features).unwrap(),
            &data.targets,
        )
        .unwrap()
        .l_mae;
        let after = crate::losses::breakdown_values(
            &crate::network::predict(&params, &spec, &data.features).unwrap(),
            &data.targets,
        )
        .unwrap()
        .l_mae;
        assert!(after < before, "MAE did not improve: {before} -> {after}");
    }

    #[test]
    fn single_sample_batches_skipped_for_pairwise() {
        // 65 rows with batch 64 leaves a trailing batch of 1
        let data = line_dataset(65);
        let spec = NetworkSpec::new(1, vec![], 1);
        let mut cfg = base_cfg(LossKind::Gar(GarConfig::new(1.0)));
        cfg.epochs = 3;
        let (_, trace) = train(&data, &spec, &cfg).unwrap();
        assert_eq!(trace.skipped_batches, 3);

        // pointwise losses keep the singleton batch
        let mut cfg = base_cfg(LossKind::Mse);
        cfg.epochs = 3;
        let (_, trace) = train(&data, &spec, &cfg).unwrap();
        assert_eq!(trace.skipped_batches, 0);
    }

    #[test]
    fn trace_csv_shape() {
        let data = line_dataset(16);
        let spec = NetworkSpec::new(1, vec![], 1);
        let mut cfg = base_cfg(LossKind::Mae);
        cfg.epochs = 2;
        let (_, trace) = train(&data, &spec, &cfg).unwrap();
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "epoch,train_loss,lr,mean_error,error_std");
    }

    #[test]
    fn validate_rejects_pairwise_batch_one() {
        let mut cfg = base_cfg(LossKind::MaePearson);
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
    }
}
