//! Evaluation metrics: MAE, RMSE, Pearson, Spearman (average-rank ties) and
//! R^2, reported per target plus a cross-target average.

use serde::Serialize;

use crate::error::{GarError, Result};
use crate::tensor::Tensor;

/// Direction-aware metric selector used for model selection and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Rmse,
    Pearson,
    Spearman,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mae, Metric::Rmse, Metric::Pearson, Metric::Spearman];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }

    pub fn lower_is_better(&self) -> bool {
        matches!(self, Metric::Mae | Metric::Rmse)
    }

    pub fn of(&self, r: &MetricReport) -> f64 {
        match self {
            Metric::Mae => r.mae,
            Metric::Rmse => r.rmse,
            Metric::Pearson => r.pearson,
            Metric::Spearman => r.spearman,
        }
    }

    /// True when `a` is strictly better than `b` for this metric.
    pub fn better(&self, a: f64, b: f64) -> bool {
        if self.lower_is_better() {
            a < b
        } else {
            a > b
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub pearson: f64,
    pub spearman: f64,
    pub r2: f64,
    /// Truth column had zero variance; correlation metrics are NaN.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub pearson: f64,
    pub spearman: f64,
    pub r2: f64,
    pub per_target: Vec<TargetMetrics>,
    pub any_degenerate: bool,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "mae,rmse,pearson,spearman,r2"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.mae, self.rmse, self.pearson, self.spearman, self.r2
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// 1-based ranks with tied values receiving the mean rank of their run.
pub fn rank_average_ties(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson_corr(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Per-target metrics plus unweighted cross-target averages.
///
/// Truth columns with zero variance get NaN for pearson/spearman/r2 and set
/// the degenerate flag.
pub fn evaluate(pred: &Tensor, truth: &Tensor) -> Result<MetricReport> {
    let pm = pred.as_matrix();
    let tm = truth.as_matrix();
    if pm.shape() != tm.shape() {
        return Err(GarError::ShapeMismatch {
            expected: tm.shape().to_vec(),
            got: pm.shape().to_vec(),
        });
    }
    let (n, t) = (pm.shape()[0], pm.shape()[1]);
    if n < 2 {
        return Err(GarError::Domain {
            op: "evaluate",
            detail: "needs at least two samples".into(),
        });
    }
    let nf = n as f64;
    let mut per_target = Vec::with_capacity(t);
    for j in 0..t {
        let p: Vec<f64> = (0..n).map(|i| pm.data()[i * t + j]).collect();
        let y: Vec<f64> = (0..n).map(|i| tm.data()[i * t + j]).collect();
        let mae = p
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / nf;
        let sse: f64 = p.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let rmse = (sse / nf).sqrt();
        let my = y.iter().sum::<f64>() / nf;
        let sst: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
        let (pearson, spearman, r2, degenerate) = if sst == 0.0 {
            (f64::NAN, f64::NAN, f64::NAN, true)
        } else {
            let pearson = pearson_corr(&p, &y).unwrap_or(f64::NAN);
            let rp = rank_average_ties(&p);
            let ry = rank_average_ties(&y);
            let spearman = pearson_corr(&rp, &ry).unwrap_or(f64::NAN);
            (pearson, spearman, 1.0 - sse / sst, false)
        };
        // power-mean inequality; holds for every finite column
        assert!(rmse >= mae - 1e-12, "rmse {rmse} < mae {mae}");
        per_target.push(TargetMetrics {
            mae,
            rmse,
            pearson,
            spearman,
            r2,
            degenerate,
        });
    }
    let tf = t as f64;
    let avg = |f: fn(&TargetMetrics) -> f64| per_target.iter().map(f).sum::<f64>() / tf;
    Ok(MetricReport {
        mae: avg(|m| m.mae),
        rmse: avg(|m| m.rmse),
        pearson: avg(|m| m.pearson),
        spearman: avg(|m| m.spearman),
        r2: avg(|m| m.r2),
        any_degenerate: per_target.iter().any(|m| m.degenerate),
        per_target,
    })
}
