//! Dataset construction: synthetic grids, CSV ingestion, splits, k-fold
//! cross-validation and train-statistics standardization.
//!
//! CSV format: comma-separated, mandatory header row, UTF-8, '.' decimal
//! separator, numeric cells unquoted (header cells may be quoted).

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GarError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Tensor,
    pub targets: Tensor,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    standardized: bool,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        targets: Tensor,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Dataset> {
        let f = features.as_matrix();
        let t = targets.as_matrix();
        if f.rows() == 0 || f.cols() == 0 || t.cols() == 0 {
            return Err(GarError::EmptyTensor { op: "dataset" });
        }
        if f.rows() != t.rows() {
            return Err(GarError::ShapeMismatch {
                expected: f.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        if !f.all_finite() || !t.all_finite() {
            return Err(GarError::Domain {
                op: "dataset",
                detail: "non-finite entries".into(),
            });
        }
        if feature_names.len() != f.cols() || target_names.len() != t.cols() {
            return Err(GarError::InvalidConfig(
                "column name count does not match data".into(),
            ));
        }
        Ok(Dataset {
            features: f,
            targets: t,
            feature_names,
            target_names,
            standardized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn t(&self) -> usize {
        self.targets.cols()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Rows at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            features: self.features.gather_rows(idx)?,
            targets: self.targets.gather_rows(idx)?,
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            standardized: self.standardized,
        })
    }
}

// ---------------------------------------------------------------------------
// synthetic generators
// ---------------------------------------------------------------------------

/// Number of grid points for `start + step * i` up to `end` inclusive
/// (endpoint counted when within half a step).
fn grid_len(start: f64, end: f64, step: f64) -> usize {
    ((end - start) / step + 0.5).floor() as usize + 1
}

/// y = sin(x) on x in [-10 pi, 10 pi] with spacing 0.1 (629 points).
pub fn gen_sine() -> Dataset {
    let start = -10.0 * PI;
    let n = grid_len(start, 10.0 * PI, 0.1);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let x = start + 0.1 * i as f64;
        xs.push(x);
        ys.push(x.sin());
    }
    Dataset::new(
        Tensor::matrix(n, 1, xs).expect("grid length"),
        Tensor::matrix(n, 1, ys).expect("grid length"),
        vec!["x".into()],
        vec!["y".into()],
    )
    .expect("generated data is finite")
}

/// The density-warped sine: raw grid u in [-1024, 1024] spacing 0.1,
/// x = sign(u) sqrt(|u|), y = x^2 sin(x) / mean(x^2) (20481 points).
pub fn gen_squared_sine() -> Dataset {
    let n = grid_len(-1024.0, 1024.0, 0.1);
    let half = (n - 1) / 2;
    let mut xs = Vec::with_capacity(n);
    for i in 0..n {
        // integer-scaled so u is exactly 0 mid-grid and +-1024 at the ends
        let u = (i as i64 - half as i64) as f64 * 0.1;
        xs.push(u.signum() * u.abs().sqrt());
    }
    let mean_sq: f64 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let ys: Vec<f64> = xs.iter().map(|x| x * x * x.sin() / mean_sq).collect();
    Dataset::new(
        Tensor::matrix(n, 1, xs).expect("grid length"),
        Tensor::matrix(n, 1, ys).expect("grid length"),
        vec!["x".into()],
        vec!["y".into()],
    )
    .expect("generated data is finite")
}

/// Seeded uniform half split used by the synthetic experiments: first half of
/// a shuffled index set trains, the rest evaluates.
pub fn half_split(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = data.n() / 2;
    Ok((data.subset(&idx[..cut])?, data.subset(&idx[cut..])?))
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn clean_header_cell(cell: &str) -> String {
    cell.trim().trim_matches('"').trim().to_string()
}

/// Load a numeric CSV; `target_columns` become the targets (in the order
/// given), everything else the features. Row order is preserved.
pub fn load_csv(path: &Path, target_columns: &[String]) -> Result<Dataset> {
    load_csv_dropping(path, target_columns, &[])
}

/// Like [`load_csv`] but discarding `drop_columns` entirely (id columns and
/// targets that belong to a sibling task).
pub fn load_csv_dropping(
    path: &Path,
    target_columns: &[String],
    drop_columns: &[String],
) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or(GarError::CsvParse {
        row: 1,
        col: 1,
        detail: "empty file".into(),
    })?;
    let header: Vec<String> = header_line.split(',').map(clean_header_cell).collect();

    let col_index = |name: &String| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| GarError::MissingColumn(name.clone()))
    };
    let target_idx: Vec<usize> = target_columns.iter().map(col_index).collect::<Result<_>>()?;
    let drop_idx: Vec<usize> = drop_columns.iter().map(col_index).collect::<Result<_>>()?;
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|i| !target_idx.contains(i) && !drop_idx.contains(i))
        .collect();
    if feature_idx.is_empty() || target_idx.is_empty() {
        return Err(GarError::InvalidConfig(
            "csv must keep at least one feature and one target column".into(),
        ));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(GarError::CsvParse {
                row: line_no + 1,
                col: cells.len(),
                detail: format!("expected {} cells, got {}", header.len(), cells.len()),
            });
        }
        let mut row = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| GarError::CsvParse {
                row: line_no + 1,
                col: c + 1,
                detail: format!("non-numeric cell '{}'", cell.trim()),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GarError::CsvParse {
            row: 2,
            col: 1,
            detail: "no data rows".into(),
        });
    }

    let n = rows.len();
    let mut features = Vec::with_capacity(n * feature_idx.len());
    let mut targets = Vec::with_capacity(n * target_idx.len());
    for row in &rows {
        for &i in &feature_idx {
            features.push(row[i]);
        }
        for &i in &target_idx {
            targets.push(row[i]);
        }
    }
    Dataset::new(
        Tensor::matrix(n, feature_idx.len(), features)?,
        Tensor::matrix(n, target_idx.len(), targets)?,
        feature_idx.iter().map(|&i| header[i].clone()).collect(),
        target_idx.iter().map(|&i| header[i].clone()).collect(),
    )
}

/// Write features-then-targets with a header row. Values use the shortest
/// representation that round-trips exactly.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<&str> = data
        .feature_names
        .iter()
        .chain(data.target_names.iter())
        .map(|s| s.as_str())
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let (d, t) = (data.d(), data.t());
    for i in 0..data.n() {
        let mut cells: Vec<String> = Vec::with_capacity(d + t);
        for j in 0..d {
            cells.push(format!("{}", data.features.data()[i * d + j]));
        }
        for j in 0..t {
            cells.push(format!("{}", data.targets.data()[i * t + j]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// presets for the tabular benchmarks
// ---------------------------------------------------------------------------

/// Column-mapping presets for the UCI benchmark layouts. Files must be
/// downloaded separately; no fetching happens here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetPreset {
    Concrete,
    WineQuality,
    ParkinsonTotal,
    ParkinsonMotor,
}

impl DatasetPreset {
    pub fn from_name(name: &str) -> Option<DatasetPreset> {
        match name {
            "concrete" => Some(DatasetPreset::Concrete),
            "wine_quality" | "wine" => Some(DatasetPreset::WineQuality),
            "parkinson_total" => Some(DatasetPreset::ParkinsonTotal),
            "parkinson_motor" => Some(DatasetPreset::ParkinsonMotor),
            _ => None,
        }
    }

    pub fn target_columns(&self) -> Vec<String> {
        match self {
            DatasetPreset::Concrete => vec!["strength".into()],
            DatasetPreset::WineQuality => vec!["quality".into()],
            DatasetPreset::ParkinsonTotal => vec!["total_UPDRS".into()],
            DatasetPreset::ParkinsonMotor => vec!["motor_UPDRS".into()],
        }
    }

    pub fn drop_columns(&self) -> Vec<String> {
        match self {
            DatasetPreset::Concrete | DatasetPreset::WineQuality => vec![],
            DatasetPreset::ParkinsonTotal => vec!["subject#".into(), "motor_UPDRS".into()],
            DatasetPreset::ParkinsonMotor => vec!["subject#".into(), "total_UPDRS".into()],
        }
    }

    pub fn load(&self, path: &Path) -> Result<Dataset> {
        load_csv_dropping(path, &self.target_columns(), &self.drop_columns())
    }
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub k_folds: usize,
    pub seed: u64,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(GarError::InvalidConfig(format!(
                "test_fraction must be in (0,1), got {}",
                self.test_fraction
            )));
        }
        if self.k_folds < 2 {
            return Err(GarError::InvalidConfig(format!(
                "k_folds must be >= 2, got {}",
                self.k_folds
            )));
        }
        Ok(())
    }
}

/// Seeded shuffle, then the first ceil(test_fraction * N) rows become the
/// test set and the rest is partitioned into k contiguous folds. Fold i
/// pairs (train = everything else, val = fold i).
pub fn split_and_fold(
    data: &Dataset,
    plan: &SplitPlan,
) -> Result<(Dataset, Vec<(Dataset, Dataset)>)> {
    plan.validate()?;
    let n = data.n();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));
    let test_len = ((plan.test_fraction * n as f64).ceil() as usize).min(n);
    let (test_idx, rest) = idx.split_at(test_len);

    let k = plan.k_folds;
    let base = rest.len() / k;
    let extra = rest.len() % k;
    let mut folds_idx: Vec<&[usize]> = Vec::with_capacity(k);
    let mut cursor = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds_idx.push(&rest[cursor..cursor + len]);
        cursor += len;
    }
    if folds_idx.iter().any(|f| f.len() < 2) {
        return Err(GarError::InvalidConfig(format!(
            "{} rows cannot fill {} folds with >= 2 validation rows each",
            rest.len(),
            k
        )));
    }

    let test = data.subset(test_idx)?;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let val = data.subset(folds_idx[f])?;
        let train_idx: Vec<usize> = folds_idx
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        let train = data.subset(&train_idx)?;
        folds.push((train, val));
    }
    Ok((test, folds))
}

// ---------------------------------------------------------------------------
// standardization
// ---------------------------------------------------------------------------

/// Per-column means/scales recorded from a training set. A scale of 1 marks
/// a zero-variance column (centered but not rescaled).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_mean: Option<Vec<f64>>,
    pub target_scale: Option<Vec<f64>>,
}

fn column_stats(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (t.rows(), t.cols());
    let nf = n as f64;
    let mut means = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            means[j] += t.data()[i * c + j];
        }
    }
    for m in &mut means {
        *m /= nf;
    }
    let mut scales = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            let d = t.data()[i * c + j] - means[j];
            scales[j] += d * d;
        }
    }
    for s in &mut scales {
        *s = (*s / nf).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    (means, scales)
}

fn apply_stats(t: &Tensor, means: &[f64], scales: &[f64]) -> Tensor {
    let (n, c) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(n * c);
    for i in 0..n {
        for j in 0..c {
            data.push((t.data()[i * c + j] - means[j]) / scales[j]);
        }
    }
    Tensor::matrix(n, c, data).expect("same shape")
}

/// Z-score every provided dataset using statistics computed on `train` only.
/// Returns the transformed datasets in order [train, others...].
pub fn standardize(
    train: &Dataset,
    others: &[&Dataset],
    targets_too: bool,
) -> Result<(Vec<Dataset>, StandardizeStats)> {
    if train.standardized || others.iter().any(|d| d.standardized) {
        return Err(GarError::InvalidConfig(
            "dataset is already standardized".into(),
        ));
    }
    let (f_mean, f_scale) = column_stats(&train.features);
    let (t_mean, t_scale) = column_stats(&train.targets);
    let stats = StandardizeStats {
        feature_mean: f_mean,
        feature_scale: f_scale,
        target_mean: targets_too.then(|| t_mean.clone()),
        target_scale: targets_too.then(|| t_scale.clone()),
    };
    let transform = |d: &Dataset| -> Dataset {
        Dataset {
            features: apply_stats(&d.features, &stats.feature_mean, &stats.feature_scale),
            targets: if targets_too {
                apply_stats(&d.targets, &t_mean, &t_scale)
            } else {
                d.targets.clone()
            },
            feature_names: d.feature_names.clone(),
            target_names: d.target_names.clone(),
            standardized: true,
        }
    };
    let mut out = Vec::with_capacity(1 + others.len());
    out.push(transform(train));
    out.extend(others.iter().map(|d| transform(d)));
    Ok((out, stats))
}
