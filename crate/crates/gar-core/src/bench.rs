//! Timing harness for the loss computations: forward+backward of the
//! linear-time losses against value-only evaluation of the quadratic
//! definitional forms.

use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aggregate::{gar_kl, GarConfig};
use crate::autodiff::{backward, Var};
use crate::error::{GarError, Result};
use crate::losses::{
    self, loss_diff, loss_diffnorm, mae, pairwise_diff_quadratic, pairwise_diffnorm_quadratic,
    Batch, DEFAULT_EPS,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub batch_size: usize,
    pub loss_name: String,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    pub repeats: usize,
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut s = String::from("batch_size,loss_name,median_ns,p10_ns,p90_ns,repeats\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.batch_size, r.loss_name, r.median_ns, r.p10_ns, r.p90_ns, r.repeats
        ));
    }
    s
}

fn percentile(sorted: &[u64], q: f64) -> u64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

fn measure(repeats: usize, mut f: impl FnMut() -> f64) -> (u64, u64, u64, f64) {
    // warmup runs are excluded from the statistics
    let mut value = 0.0;
    for _ in 0..3 {
        value = f();
    }
    let mut times: Vec<u64> = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        value = f();
        times.push(start.elapsed().as_nanos() as u64);
    }
    times.sort_unstable();
    (
        percentile(&times, 0.5),
        percentile(&times, 0.1),
        percentile(&times, 0.9),
        value,
    )
}

fn random_pair(n: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let dist = Uniform::new(-2.0, 2.0);
    let f: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    let y: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    (Tensor::vector(f), Tensor::vector(y))
}

fn fwd_bwd(pred: &Tensor, targ: &Tensor, build: impl Fn(&Batch) -> Result<Var>) -> f64 {
    let leaf = Var::leaf(pred.clone());
    let batch = Batch::new(leaf, targ.clone()).expect("finite random batch");
    let loss = build(&batch).expect("valid loss");
    backward(&loss).expect("scalar root");
    loss.item()
}

/// Time forward+backward of the linear losses and the combined aggregate,
/// plus value-only evaluation of the quadratic oracles, at every batch size.
pub fn time_losses(sizes: &[usize], repeats: usize, seed: u64) -> Result<Vec<TimingRow>> {
    if repeats < 20 {
        return Err(GarError::InvalidConfig(format!(
            "repeats must be >= 20, got {repeats}"
        )));
    }
    if sizes.iter().any(|&s| s < 2) {
        return Err(GarError::InvalidConfig("sizes must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &n in sizes {
        let (pred, targ) = random_pair(n, &mut rng);

        let mut push = |name: &str, med: u64, p10: u64, p90: u64| {
            rows.push(TimingRow {
                batch_size: n,
                loss_name: name.to_string(),
                median_ns: med,
                p10_ns: p10,
                p90_ns: p90,
                repeats,
            });
        };

        let (med, p10, p90, timed) = measure(repeats, || fwd_bwd(&pred, &targ, mae));
        let untimed = fwd_bwd(&pred, &targ, mae);
        assert_eq!(timed.to_bits(), untimed.to_bits());
        push("mae", med, p10, p90);

        let (med, p10, p90, timed) = measure(repeats, || fwd_bwd(&pred, &targ, loss_diff));
        let untimed = fwd_bwd(&pred, &targ, loss_diff);
        assert_eq!(timed.to_bits(), untimed.to_bits());
        push("loss_diff", med, p10, p90);

        let (med, p10, p90, timed) = measure(repeats, || {
            fwd_bwd(&pred, &targ, |b| loss_diffnorm(b, DEFAULT_EPS))
        });
        let untimed = fwd_bwd(&pred, &targ, |b| loss_diffnorm(b, DEFAULT_EPS));
        assert_eq!(timed.to_bits(), untimed.to_bits());
        push("loss_diffnorm", med, p10, p90);

        let gar_cfg = GarConfig::new(1.0);
        let gar = |b: &Batch| -> Result<Var> {
            let subs = vec![
                losses::mae(b)?,
                loss_diff(b)?,
                loss_diffnorm(b, DEFAULT_EPS)?,
            ];
            gar_kl(&subs, &gar_cfg)
        };
        let (med, p10, p90, timed) = measure(repeats, || fwd_bwd(&pred, &targ, gar));
        let untimed = fwd_bwd(&pred, &targ, gar);
        assert_eq!(timed.to_bits(), untimed.to_bits());
        push("gar_kl", med, p10, p90);

        let (med, p10, p90, timed) = measure(repeats, || pairwise_diff_quadratic(&pred, &targ));
        assert_eq!(
            timed.to_bits(),
            pairwise_diff_quadratic(&pred, &targ).to_bits()
        );
        push("pairwise_diff_quadratic", med, p10, p90);

        let (med, p10, p90, timed) = measure(repeats, || {
            pairwise_diffnorm_quadratic(&pred, &targ).expect("non-degenerate random batch")
        });
        let untimed = pairwise_diffnorm_quadratic(&pred, &targ)?;
        assert_eq!(timed.to_bits(), untimed.to_bits());
        push("pairwise_diffnorm_quadratic", med, p10, p90);
    }
    Ok(rows)
}

/// Row for one (size, loss) pair, if measured.
pub fn median_of<'a>(rows: &'a [TimingRow], size: usize, name: &str) -> Option<&'a TimingRow> {
    rows.iter()
        .find(|r| r.batch_size == size && r.loss_name == name)
}
