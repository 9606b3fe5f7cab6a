//! Experiment runner: hyper-parameter grids, k-fold cross-validation with
//! per-epoch validation-based selection, an always-comparable MAE baseline,
//! ablation over the sub-loss masks, sensitivity sweeps, and report files.
//!
//! Two protocols, chosen by the dataset selector:
//! - tabular: seeded test split + k-fold CV; the reported test value per
//!   (fold, seed, metric) comes from the grid point *and epoch* with the best
//!   validation value;
//! - synthetic (sine / squared sine): per-seed half split, evaluation on the
//!   held-out half at the final epoch, grid selection only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::GarConfig;
use crate::datasets::{
    self, gen_sine, gen_squared_sine, half_split, split_and_fold, Dataset, DatasetPreset,
    SplitPlan,
};
use crate::error::{GarError, Result};
use crate::metrics::{evaluate, Metric, MetricReport};
use crate::network::{forward, predict, save_checkpoint, NetworkSpec};
use crate::optimize::{train_with_callback, LossKind, OptimizerKind, TrainConfig, TrainingTrace};
use crate::stats::paired_ttest;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSelector {
    Sine,
    SquaredSine,
    Csv { path: String, targets: Vec<String> },
    Preset { name: String, path: String },
}

impl DatasetSelector {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, DatasetSelector::Sine | DatasetSelector::SquaredSine)
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSelector::Sine => Ok(gen_sine()),
            DatasetSelector::SquaredSine => Ok(gen_squared_sine()),
            DatasetSelector::Csv { path, targets } => {
                datasets::load_csv(Path::new(path), targets)
            }
            DatasetSelector::Preset { name, path } => DatasetPreset::from_name(name)
                .ok_or_else(|| GarError::InvalidConfig(format!("unknown preset '{name}'")))?
                .load(Path::new(path)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Mae,
    Mse,
    Huber,
    MaePearson,
    Gar,
}

impl MethodKind {
    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Mae => "mae",
            MethodKind::Mse => "mse",
            MethodKind::Huber => "huber",
            MethodKind::MaePearson => "mae_pearson",
            MethodKind::Gar => "gar",
        }
    }
}

fn d_optimizer() -> OptimizerKind {
    OptimizerKind::SgdMomentum
}
fn d_epochs() -> usize {
    100
}
fn d_batch() -> usize {
    256
}
fn d_momentum() -> f64 {
    0.9
}
fn d_lr_grid() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
}
fn d_wd_grid() -> Vec<f64> {
    vec![1e-3, 1e-4, 1e-5]
}
fn d_alpha_grid() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}
fn d_delta_grid() -> Vec<f64> {
    vec![0.25, 1.0, 4.0]
}
fn d_decay_epochs() -> Vec<usize> {
    vec![50, 75]
}
fn d_decay_factor() -> f64 {
    0.1
}
fn d_test_fraction() -> f64 {
    0.2
}
fn d_k_folds() -> usize {
    5
}
fn d_split_seed() -> u64 {
    123
}
fn d_seeds() -> Vec<u64> {
    vec![123]
}
fn d_metric() -> Metric {
    Metric::Pearson
}
fn d_workers() -> usize {
    1
}
fn d_true() -> bool {
    true
}

/// Flat experiment description; every field has a default matching the
/// tabular benchmark protocol, so a config file only needs `dataset` and
/// `method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSelector,
    pub method: MethodKind,
    /// Sub-loss mask for GAR: [pointwise MAE, variance, 1 - Pearson].
    #[serde(default)]
    pub gar_mask: Option<Vec<bool>>,
    /// Overrides the width rule (<=16 features: [16,32,16,8]; otherwise
    /// [128,256,128,64]; synthetic: five hidden layers of 100).
    #[serde(default)]
    pub hidden_dims: Option<Vec<usize>>,
    #[serde(default = "d_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_lr_grid")]
    pub lr_grid: Vec<f64>,
    #[serde(default = "d_wd_grid")]
    pub weight_decay_grid: Vec<f64>,
    #[serde(default = "d_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "d_delta_grid")]
    pub huber_delta_grid: Vec<f64>,
    #[serde(default = "d_decay_epochs")]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "d_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default = "d_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "d_k_folds")]
    pub k_folds: usize,
    #[serde(default = "d_split_seed")]
    pub split_seed: u64,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default = "d_metric")]
    pub selection_metric: Metric,
    #[serde(default = "d_workers")]
    pub workers: usize,
    /// Also run the plain-MAE baseline under the same protocol and report
    /// paired p-values against it.
    #[serde(default = "d_true")]
    pub mae_baseline: bool,
}

impl ExperimentConfig {
    /// Tabular-protocol defaults around a dataset and method.
    pub fn new(dataset: DatasetSelector, method: MethodKind) -> ExperimentConfig {
        ExperimentConfig {
            dataset,
            method,
            gar_mask: None,
            hidden_dims: None,
            optimizer: d_optimizer(),
            epochs: d_epochs(),
            batch_size: d_batch(),
            momentum: d_momentum(),
            lr_grid: d_lr_grid(),
            weight_decay_grid: d_wd_grid(),
            alpha_grid: d_alpha_grid(),
            huber_delta_grid: d_delta_grid(),
            lr_decay_epochs: d_decay_epochs(),
            lr_decay_factor: d_decay_factor(),
            test_fraction: d_test_fraction(),
            k_folds: d_k_folds(),
            split_seed: d_split_seed(),
            seeds: d_seeds(),
            standardize: false,
            selection_metric: d_metric(),
            workers: d_workers(),
            mae_baseline: true,
        }
    }

    /// Synthetic-protocol defaults: 300 epochs, batch 128, Adam with decay
    /// at 100/200, alpha 0.5, five trials.
    pub fn synthetic(dataset: DatasetSelector, method: MethodKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(dataset, method);
        cfg.epochs = 300;
        cfg.batch_size = 128;
        cfg.optimizer = OptimizerKind::Adam;
        cfg.lr_decay_epochs = vec![100, 200];
        cfg.lr_grid = vec![1e-1, 1e-2, 1e-3, 1e-4];
        cfg.weight_decay_grid = vec![1e-3, 1e-4, 1e-5, 0.0];
        cfg.alpha_grid = vec![0.5];
        cfg.seeds = vec![1, 2, 3, 4, 5];
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_grid.is_empty()
            || self.weight_decay_grid.is_empty()
            || self.alpha_grid.is_empty()
            || self.huber_delta_grid.is_empty()
        {
            return Err(GarError::InvalidConfig("grids must be nonempty".into()));
        }
        if self.seeds.is_empty() {
            return Err(GarError::InvalidConfig("seeds must be nonempty".into()));
        }
        if self.epochs == 0 {
            return Err(GarError::InvalidConfig("epochs must be >= 1".into()));
        }
        if let Some(mask) = &self.gar_mask {
            if mask.len() != 3 || !mask.iter().any(|&m| m) {
                return Err(GarError::InvalidConfig(
                    "gar_mask must be three flags with at least one set".into(),
                ));
            }
        }
        Ok(())
    }

    fn mask(&self) -> Vec<bool> {
        self.gar_mask.clone().unwrap_or_else(|| vec![true; 3])
    }

    fn network_spec(&self, data: &Dataset) -> NetworkSpec {
        let hidden = match &self.hidden_dims {
            Some(h) => h.clone(),
            None if self.dataset.is_synthetic() => vec![100; 5],
            None if data.d() <= 16 => vec![16, 32, 16, 8],
            None => vec![128, 256, 128, 64],
        };
        NetworkSpec::new(data.d(), hidden, data.t())
    }
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub lr0: f64,
    pub weight_decay: f64,
    /// Method hyper-parameter: alpha for GAR, delta for Huber.
    pub hyper: Option<f64>,
}

fn grid_points(cfg: &ExperimentConfig, method: MethodKind) -> Vec<GridPoint> {
    let hypers: Vec<Option<f64>> = match method {
        MethodKind::Gar => {
            // aggregation of a single sub-loss is log(L) for every alpha
            if cfg.mask().iter().filter(|&&m| m).count() == 1 {
                vec![Some(cfg.alpha_grid[0])]
            } else {
                cfg.alpha_grid.iter().map(|&a| Some(a)).collect()
            }
        }
        MethodKind::Huber => cfg.huber_delta_grid.iter().map(|&d| Some(d)).collect(),
        _ => vec![None],
    };
    let mut points = Vec::new();
    for &lr0 in &cfg.lr_grid {
        for &weight_decay in &cfg.weight_decay_grid {
            for &hyper in &hypers {
                points.push(GridPoint {
                    lr0,
                    weight_decay,
                    hyper,
                });
            }
        }
    }
    points
}

fn loss_kind(cfg: &ExperimentConfig, method: MethodKind, point: &GridPoint) -> LossKind {
    match method {
        MethodKind::Mae => LossKind::Mae,
        MethodKind::Mse => LossKind::Mse,
        MethodKind::Huber => LossKind::Huber(point.hyper.expect("huber grid carries delta")),
        MethodKind::MaePearson => LossKind::MaePearson,
        MethodKind::Gar => LossKind::Gar(GarConfig::with_mask(
            point.hyper.expect("gar grid carries alpha"),
            cfg.mask(),
        )),
    }
}

fn train_config(
    cfg: &ExperimentConfig,
    method: MethodKind,
    point: &GridPoint,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        optimizer: cfg.optimizer,
        lr0: point.lr0,
        momentum: cfg.momentum,
        adam_betas: (0.9, 0.999),
        adam_eps: 1e-8,
        weight_decay: point.weight_decay,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr_decay_epochs: cfg.lr_decay_epochs.clone(),
        lr_decay_factor: cfg.lr_decay_factor,
        seed,
        loss_kind: loss_kind(cfg, method, point),
    }
}

// ---------------------------------------------------------------------------
// execution
// ---------------------------------------------------------------------------

struct FoldData {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    /// Full feature grid for prediction curves (synthetic only).
    curve_x: Option<(Tensor, Tensor)>,
}

/// (fold, seed) evaluation contexts in report order.
fn build_contexts(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<(usize, u64, FoldData)>> {
    let mut out = Vec::new();
    if cfg.dataset.is_synthetic() {
        for &seed in &cfg.seeds {
            let (train, eval) = half_split(data, seed)?;
            let (train, eval) = if cfg.standardize {
                let (mut ds, _) = datasets::standardize(&train, &[&eval], true)?;
                let e = ds.pop().expect("eval present");
                let t = ds.pop().expect("train present");
                (t, e)
            } else {
                (train, eval)
            };
            out.push((
                0,
                seed,
                FoldData {
                    train,
                    val: eval.clone(),
                    test: eval,
                    curve_x: Some((data.features.clone(), data.targets.clone())),
                },
            ));
        }
    } else {
        let plan = SplitPlan {
            test_fraction: cfg.test_fraction,
            k_folds: cfg.k_folds,
            seed: cfg.split_seed,
        };
        let (test, folds) = split_and_fold(data, &plan)?;
        for (f, (train, val)) in folds.into_iter().enumerate() {
            for &seed in &cfg.seeds {
                let (train, val, test) = if cfg.standardize {
                    let (mut ds, _) = datasets::standardize(&train, &[&val, &test], true)?;
                    let te = ds.pop().expect("test present");
                    let v = ds.pop().expect("val present");
                    let tr = ds.pop().expect("train present");
                    (tr, v, te)
                } else {
                    (train.clone(), val.clone(), test.clone())
                };
                out.push((
                    f,
                    seed,
                    FoldData {
                        train,
                        val,
                        test,
                        curve_x: None,
                    },
                ));
            }
        }
    }
    Ok(out)
}

struct RunSeries {
    /// Validation/test metrics per evaluated epoch. Tabular protocol
    /// evaluates every epoch; synthetic only the final one.
    val: Vec<MetricReport>,
    test: Vec<MetricReport>,
    epochs_evaluated: Vec<usize>,
    trace: TrainingTrace,
    curve: Option<Vec<f64>>,
}

fn single_run(
    fd: &FoldData,
    spec: &NetworkSpec,
    tc: &TrainConfig,
    eval_each_epoch: bool,
) -> Result<RunSeries> {
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut epochs_evaluated = Vec::new();
    let mut curve = None;
    let (_, trace) = train_with_callback(&fd.train, spec, tc, |epoch, params| {
        let last = epoch + 1 == tc.epochs;
        if eval_each_epoch || last {
            let pv = predict(params, spec, &fd.val.features).expect("shapes pre-validated");
            val.push(evaluate(&pv, &fd.val.targets).expect("val set has >= 2 rows"));
            let pt = predict(params, spec, &fd.test.features).expect("shapes pre-validated");
            test.push(evaluate(&pt, &fd.test.targets).expect("test set has >= 2 rows"));
            epochs_evaluated.push(epoch);
        }
        if last {
            if let Some((grid_x, _)) = &fd.curve_x {
                let p = predict(params, spec, grid_x).expect("shapes pre-validated");
                curve = Some(p.data().to_vec());
            }
        }
    })?;
    Ok(RunSeries {
        val,
        test,
        epochs_evaluated,
        trace,
        curve,
    })
}

/// All runs for one method, indexed [context][grid].
fn run_method(
    cfg: &ExperimentConfig,
    method: MethodKind,
    contexts: &[(usize, u64, FoldData)],
    spec: &NetworkSpec,
    grid: &[GridPoint],
) -> Result<Vec<Vec<RunSeries>>> {
    let eval_each_epoch = !cfg.dataset.is_synthetic();
    let jobs: Vec<(usize, usize)> = (0..contexts.len())
        .flat_map(|c| (0..grid.len()).map(move |g| (c, g)))
        .collect();
    let execute = |&(c, g): &(usize, usize)| -> Result<RunSeries> {
        let (_, seed, fd) = &contexts[c];
        let tc = train_config(cfg, method, &grid[g], *seed);
        single_run(fd, spec, &tc, eval_each_epoch)
    };
    let flat: Vec<RunSeries> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| GarError::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter().map(execute).collect::<Result<Vec<_>>>()
        })?
    } else {
        jobs.iter().map(execute).collect::<Result<Vec<_>>>()?
    };
    let mut it = flat.into_iter();
    let mut out = Vec::with_capacity(contexts.len());
    for _ in 0..contexts.len() {
        let mut per_grid = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            per_grid.push(it.next().expect("job count matches"));
        }
        out.push(per_grid);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// selection and reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SelectionRow {
    pub fold: usize,
    pub seed: u64,
    pub lr0: f64,
    pub weight_decay: f64,
    pub hyper: Option<f64>,
    pub epoch: usize,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub selections: Vec<SelectionRow>,
    pub test_mean: f64,
    pub test_std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub metrics: Vec<MetricSummary>,
}

impl MethodReport {
    pub fn summary(&self, metric: Metric) -> &MetricSummary {
        self.metrics
            .iter()
            .find(|m| m.metric == metric)
            .expect("all four metrics are always reported")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PValueRow {
    pub metric: Metric,
    pub p: f64,
    pub t: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSection {
    pub fold: usize,
    pub seed: u64,
    pub trace: TrainingTrace,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveData {
    pub x: Vec<f64>,
    pub y_true: Vec<f64>,
    pub y_pred_mean: Vec<f64>,
    pub y_pred_std: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub primary: MethodReport,
    pub baseline: Option<MethodReport>,
    pub p_vs_baseline: Vec<PValueRow>,
    pub traces: Vec<TraceSection>,
    pub curves: Option<CurveData>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn candidate_better(metric: Metric, candidate: f64, best: f64) -> bool {
    if best.is_nan() {
        return !candidate.is_nan();
    }
    metric.better(candidate, best)
}

fn select_for_metric(
    metric: Metric,
    contexts: &[(usize, u64, FoldData)],
    grid: &[GridPoint],
    runs: &[Vec<RunSeries>],
) -> MetricSummary {
    let mut selections = Vec::with_capacity(contexts.len());
    for (c, (fold, seed, _)) in contexts.iter().enumerate() {
        let mut best: Option<(usize, usize, f64)> = None; // (grid, eval idx, val)
        for (g, series) in runs[c].iter().enumerate() {
            for (e, vrep) in series.val.iter().enumerate() {
                let v = metric.of(vrep);
                let is_better = match best {
                    None => true,
                    Some((_, _, b)) => candidate_better(metric, v, b),
                };
                if is_better {
                    best = Some((g, e, v));
                }
            }
        }
        let (g, e, v) = best.expect("at least one run per context");
        let series = &runs[c][g];
        selections.push(SelectionRow {
            fold: *fold,
            seed: *seed,
            lr0: grid[g].lr0,
            weight_decay: grid[g].weight_decay,
            hyper: grid[g].hyper,
            epoch: series.epochs_evaluated[e],
            val: v,
            test: metric.of(&series.test[e]),
        });
    }
    let tests: Vec<f64> = selections.iter().map(|s| s.test).collect();
    let (test_mean, test_std) = mean_std(&tests);
    MetricSummary {
        metric,
        selections,
        test_mean,
        test_std,
    }
}

fn method_report(
    name: &str,
    contexts: &[(usize, u64, FoldData)],
    grid: &[GridPoint],
    runs: &[Vec<RunSeries>],
) -> MethodReport {
    MethodReport {
        method: name.to_string(),
        metrics: Metric::ALL
            .iter()
            .map(|&m| select_for_metric(m, contexts, grid, runs))
            .collect(),
    }
}

/// Traces and curves of the runs selected by `selection_metric`.
fn selected_extras(
    summary: &MetricSummary,
    contexts: &[(usize, u64, FoldData)],
    grid: &[GridPoint],
    runs: &[Vec<RunSeries>],
) -> (Vec<TraceSection>, Option<CurveData>) {
    let mut traces = Vec::new();
    let mut curves: Vec<&[f64]> = Vec::new();
    for (c, sel) in summary.selections.iter().enumerate() {
        let g = grid
            .iter()
            .position(|p| {
                p.lr0 == sel.lr0 && p.weight_decay == sel.weight_decay && p.hyper == sel.hyper
            })
            .expect("selection came from the grid");
        traces.push(TraceSection {
            fold: sel.fold,
            seed: sel.seed,
            trace: runs[c][g].trace.clone(),
        });
        if let Some(curve) = &runs[c][g].curve {
            curves.push(curve);
        }
    }
    let curve_data = if curves.is_empty() {
        None
    } else {
        let (x, y) = contexts[0]
            .2
            .curve_x
            .as_ref()
            .expect("curves imply synthetic contexts");
        let n = x.len();
        let mut y_pred_mean = Vec::with_capacity(n);
        let mut y_pred_std = Vec::with_capacity(n);
        for i in 0..n {
            let vals: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            let (m, s) = mean_std(&vals);
            y_pred_mean.push(m);
            y_pred_std.push(s);
        }
        Some(CurveData {
            x: x.data().to_vec(),
            y_true: y.data().to_vec(),
            y_pred_mean,
            y_pred_std,
        })
    };
    (traces, curve_data)
}

/// Full protocol for the configured method, plus the MAE baseline and paired
/// p-values when enabled. Deterministic given the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let spec = cfg.network_spec(&data);
    let contexts = build_contexts(cfg, &data)?;

    let grid = grid_points(cfg, cfg.method);
    let runs = run_method(cfg, cfg.method, &contexts, &spec, &grid)?;
    let primary = method_report(cfg.method.name(), &contexts, &grid, &runs);
    let (traces, curves) =
        selected_extras(primary.summary(cfg.selection_metric), &contexts, &grid, &runs);

    let (baseline, p_vs_baseline) = if cfg.mae_baseline && cfg.method != MethodKind::Mae {
        let bgrid = grid_points(cfg, MethodKind::Mae);
        let bruns = run_method(cfg, MethodKind::Mae, &contexts, &spec, &bgrid)?;
        let brep = method_report("mae", &contexts, &bgrid, &bruns);
        let mut ps = Vec::new();
        for &m in &Metric::ALL {
            let a: Vec<f64> = primary.summary(m).selections.iter().map(|s| s.test).collect();
            let b: Vec<f64> = brep.summary(m).selections.iter().map(|s| s.test).collect();
            if a.len() >= 2 {
                let tt = paired_ttest(&a, &b)?;
                ps.push(PValueRow {
                    metric: m,
                    p: tt.p,
                    t: tt.t,
                    degenerate: tt.degenerate,
                });
            }
        }
        (Some(brep), ps)
    } else {
        (None, Vec::new())
    };

    Ok(RunReport {
        config: cfg.clone(),
        primary,
        baseline,
        p_vs_baseline,
        traces,
        curves,
    })
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

/// The seven nonempty sub-loss masks, full GAR last.
pub const ABLATION_MASKS: [(&str, [bool; 3]); 7] = [
    ("mae", [true, false, false]),
    ("diff", [false, true, false]),
    ("diffnorm", [false, false, true]),
    ("mae+diff", [true, true, false]),
    ("mae+diffnorm", [true, false, true]),
    ("diff+diffnorm", [false, true, true]),
    ("gar", [true, true, true]),
];

#[derive(Debug, Clone, Serialize)]
pub struct AblationVariant {
    pub name: String,
    pub report: RunReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub variants: Vec<AblationVariant>,
    /// Mean rank (1 = best) over (metric, fold, seed) cells.
    pub mean_ranks: Vec<(String, f64)>,
}

impl AblationReport {
    pub fn mean_rank_of(&self, name: &str) -> Option<f64> {
        self.mean_ranks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| *r)
    }
}

/// Run every sub-loss mask under the same protocol and rank the variants.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationReport> {
    if cfg.method != MethodKind::Gar {
        return Err(GarError::InvalidConfig(
            "ablation requires method = gar".into(),
        ));
    }
    let mut variants = Vec::with_capacity(ABLATION_MASKS.len());
    for (name, mask) in ABLATION_MASKS {
        let mut vcfg = cfg.clone();
        vcfg.gar_mask = Some(mask.to_vec());
        vcfg.mae_baseline = false;
        let report = run_experiment(&vcfg)?;
        variants.push(AblationVariant {
            name: name.to_string(),
            report,
        });
    }

    // rank variants within every (metric, context) cell
    let n_cells = variants[0].report.primary.metrics[0].selections.len();
    let mut rank_sums = vec![0.0; variants.len()];
    let mut cells = 0usize;
    for (mi, &metric) in Metric::ALL.iter().enumerate() {
        for cell in 0..n_cells {
            let values: Vec<f64> = variants
                .iter()
                .map(|v| v.report.primary.metrics[mi].selections[cell].test)
                .collect();
            // direction-aware: smaller rank is better
            let keyed: Vec<f64> = if metric.lower_is_better() {
                values.clone()
            } else {
                values.iter().map(|v| -v).collect()
            };
            let ranks = crate::metrics::rank_average_ties(&keyed);
            for (v, r) in rank_sums.iter_mut().zip(ranks.iter()) {
                *v += r;
            }
            cells += 1;
        }
    }
    let mean_ranks = variants
        .iter()
        .zip(rank_sums.iter())
        .map(|(v, &s)| (v.name.clone(), s / cells as f64))
        .collect();
    Ok(AblationReport {
        variants,
        mean_ranks,
    })
}

// ---------------------------------------------------------------------------
// sensitivity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityRow {
    pub param: String,
    pub value: f64,
    pub fold: usize,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub pearson: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("param,value,fold,seed,mae,rmse,pearson,spearman\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.param, r.value, r.fold, r.seed, r.mae, r.rmse, r.pearson, r.spearman
            ));
        }
        s
    }
}

/// Sweep alpha and batch size for GAR, one full protocol run per point,
/// reporting the per-(fold, seed) selected test metrics.
pub fn run_sensitivity(
    cfg: &ExperimentConfig,
    alphas: &[f64],
    batch_sizes: &[usize],
) -> Result<SensitivityReport> {
    if cfg.method != MethodKind::Gar {
        return Err(GarError::InvalidConfig(
            "sensitivity sweep requires method = gar".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut push_rows = |param: &str, value: f64, report: &RunReport| {
        let n = report.primary.metrics[0].selections.len();
        for cell in 0..n {
            let pick = |m: Metric| {
                report
                    .primary
                    .summary(m)
                    .selections[cell]
                    .test
            };
            let sel = &report.primary.metrics[0].selections[cell];
            rows.push(SensitivityRow {
                param: param.to_string(),
                value,
                fold: sel.fold,
                seed: sel.seed,
                mae: pick(Metric::Mae),
                rmse: pick(Metric::Rmse),
                pearson: pick(Metric::Pearson),
                spearman: pick(Metric::Spearman),
            });
        }
    };
    for &alpha in alphas {
        let mut acfg = cfg.clone();
        acfg.alpha_grid = vec![alpha];
        acfg.mae_baseline = false;
        let report = run_experiment(&acfg)?;
        push_rows("alpha", alpha, &report);
    }
    for &bs in batch_sizes {
        let mut bcfg = cfg.clone();
        bcfg.batch_size = bs;
        bcfg.mae_baseline = false;
        let report = run_experiment(&bcfg)?;
        push_rows("batch_size", bs as f64, &report);
    }
    Ok(SensitivityReport { rows })
}

// ---------------------------------------------------------------------------
// file emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    PredictionCurve,
    SensitivityBox,
    Trace,
}

impl PlotKind {
    pub fn from_name(name: &str) -> Option<PlotKind> {
        match name {
            "prediction_curve" => Some(PlotKind::PredictionCurve),
            "sensitivity_box" => Some(PlotKind::SensitivityBox),
            "trace" => Some(PlotKind::Trace),
            _ => None,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl RunReport {
    pub fn summary_csv(&self) -> String {
        let mut s =
            String::from("method,metric,test_mean,test_std,baseline_mean,baseline_std,p_value\n");
        for ms in &self.primary.metrics {
            let (bm, bs) = match &self.baseline {
                Some(b) => {
                    let bsum = b.summary(ms.metric);
                    (format!("{}", bsum.test_mean), format!("{}", bsum.test_std))
                }
                None => (String::new(), String::new()),
            };
            let p = self
                .p_vs_baseline
                .iter()
                .find(|r| r.metric == ms.metric)
                .map(|r| format!("{}", r.p))
                .unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.primary.method,
                ms.metric.name(),
                ms.test_mean,
                ms.test_std,
                bm,
                bs,
                p
            ));
        }
        s
    }

    pub fn selections_csv(&self) -> String {
        let mut s = String::from(
            "method,metric,fold,seed,lr0,weight_decay,hyper,epoch,val,test\n",
        );
        let mut emit = |rep: &MethodReport| {
            for ms in &rep.metrics {
                for sel in &ms.selections {
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{}\n",
                        rep.method,
                        ms.metric.name(),
                        sel.fold,
                        sel.seed,
                        sel.lr0,
                        sel.weight_decay,
                        fmt_opt(sel.hyper),
                        sel.epoch,
                        sel.val,
                        sel.test
                    ));
                }
            }
        };
        emit(&self.primary);
        if let Some(b) = &self.baseline {
            emit(b);
        }
        s
    }

    /// report.json, summary.csv and selections.csv under `out_dir`.
    pub fn write_files(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir)?;
        let mut written = Vec::new();
        let json_path = out_dir.join("report.json");
        std::fs::write(&json_path, serde_json::to_string_pretty(self)?)?;
        written.push(json_path);
        let sum_path = out_dir.join("summary.csv");
        std::fs::write(&sum_path, self.summary_csv())?;
        written.push(sum_path);
        let sel_path = out_dir.join("selections.csv");
        std::fs::write(&sel_path, self.selections_csv())?;
        written.push(sel_path);
        Ok(written)
    }

    /// Plot-ready CSV for the requested series.
    pub fn emit_plot_data(&self, kind: PlotKind, out_dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        match kind {
            PlotKind::PredictionCurve => {
                let curves = self.curves.as_ref().ok_or_else(|| {
                    GarError::InvalidConfig(
                        "report has no prediction curves (tabular protocol)".into(),
                    )
                })?;
                let mut s = String::from("x,y_true,y_pred_mean,y_pred_std\n");
                for i in 0..curves.x.len() {
                    s.push_str(&format!(
                        "{},{},{},{}\n",
                        curves.x[i], curves.y_true[i], curves.y_pred_mean[i], curves.y_pred_std[i]
                    ));
                }
                let p = out_dir.join("prediction_curve.csv");
                std::fs::write(&p, s)?;
                Ok(p)
            }
            PlotKind::Trace => {
                if self.traces.is_empty() {
                    return Err(GarError::InvalidConfig("report has no traces".into()));
                }
                let mut s = String::from("fold,seed,epoch,train_loss,lr,mean_error,error_std\n");
                for sec in &self.traces {
                    for r in &sec.trace.epochs {
                        s.push_str(&format!(
                            "{},{},{},{},{},{},{}\n",
                            sec.fold,
                            sec.seed,
                            r.epoch,
                            r.train_loss,
                            r.lr,
                            r.mean_error,
                            r.error_std
                        ));
                    }
                }
                let p = out_dir.join("trace.csv");
                std::fs::write(&p, s)?;
                Ok(p)
            }
            PlotKind::SensitivityBox => Err(GarError::InvalidConfig(
                "sensitivity series come from the sweep runner".into(),
            )),
        }
    }
}

impl AblationReport {
    pub fn write_files(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir)?;
        let mut written = Vec::new();
        for v in &self.variants {
            let dir = out_dir.join(format!("variant_{}", v.name.replace('+', "_")));
            written.extend(v.report.write_files(&dir)?);
        }
        let mut s = String::from("variant,mean_rank\n");
        for (name, rank) in &self.mean_ranks {
            s.push_str(&format!("{name},{rank}\n"));
        }
        let p = out_dir.join("ranks.csv");
        std::fs::write(&p, s)?;
        written.push(p);
        Ok(written)
    }
}

impl SensitivityReport {
    pub fn write_files(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir)?;
        let p = out_dir.join("sensitivity.csv");
        std::fs::write(&p, self.csv())?;
        let j = out_dir.join("sensitivity.json");
        std::fs::write(&j, serde_json::to_string_pretty(self)?)?;
        Ok(vec![p, j])
    }
}

/// Retrain the selected configuration per (fold, seed) for the selection
/// metric and write model checkpoints under `out_dir/models`.
pub fn save_selected_models(cfg: &ExperimentConfig, report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let data = cfg.dataset.load()?;
    let spec = cfg.network_spec(&data);
    let contexts = build_contexts(cfg, &data)?;
    let dir = out_dir.join("models");
    std::fs::create_dir_all(&dir)?;
    let summary = report.primary.summary(cfg.selection_metric);
    let mut written = Vec::new();
    for (c, sel) in summary.selections.iter().enumerate() {
        let point = GridPoint {
            lr0: sel.lr0,
            weight_decay: sel.weight_decay,
            hyper: sel.hyper,
        };
        let mut tc = train_config(cfg, cfg.method, &point, sel.seed);
        tc.epochs = sel.epoch + 1;
        let (params, _) = train_with_callback(&contexts[c].2.train, &spec, &tc, |_, _| {})?;
        let path = dir.join(format!("fold{}_seed{}.garm", sel.fold, sel.seed));
        save_checkpoint(&params, &spec, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Shape check used by tests and the CLI: forward pass on one batch works
/// before any training starts.
pub fn preflight(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let spec = cfg.network_spec(&data);
    let params = crate::network::init(&spec, 0)?;
    let take = data.n().min(4);
    let idx: Vec<usize> = (0..take).collect();
    let sub = data.subset(&idx)?;
    forward(&params, &spec, &sub.features)?;
    Ok(())
}
