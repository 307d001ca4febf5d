//! Dataset container, fold plans, standardization and on-disk formats.
//!
//! On disk a dataset is a UTF-8 CSV with a header row of variable names and
//! an outcome column named `target`, plus an optional JSON sidecar
//! `<name>.meta.json` holding ground truth for simulated data. Lines starting
//! with `#` are comments and are skipped on read.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

pub const TARGET_COLUMN: &str = "target";

/// Ground truth recorded alongside simulated data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default)]
    pub support: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// An `n × p` design matrix with its outcome, variable names and optional
/// ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    names: Vec<String>,
    meta: Option<GroundTruth>,
    forced_task: Option<Task>,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        names: Vec<String>,
        meta: Option<GroundTruth>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return invalid(format!("need at least 2 samples, got {n}"));
        }
        if p < 2 {
            return invalid(format!("need at least 2 variables, got {p}"));
        }
        if y.len() != n {
            return invalid(format!("outcome has {} entries, design has {n} rows", y.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("design matrix contains non-finite entries");
        }
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("outcome contains non-finite entries");
        }
        if names.len() != p {
            return invalid(format!("{} names for {p} variables", names.len()));
        }
        let unique: HashSet<&str> = names.iter().map(String::as_str).collect();
        if unique.len() != p {
            return invalid("variable names are not unique");
        }
        if names.iter().any(|s| s == TARGET_COLUMN) {
            return invalid(format!("`{TARGET_COLUMN}` is reserved for the outcome"));
        }
        if let Some(m) = &meta {
            if let Some(&bad) = m.support.iter().find(|&&j| j >= p) {
                return invalid(format!("support index {bad} out of range for p={p}"));
            }
            if let Some(beta) = &m.beta {
                if beta.len() != p {
                    return invalid(format!("beta has {} entries, expected {p}", beta.len()));
                }
            }
        }
        Ok(Self {
            x,
            y,
            names,
            meta,
            forced_task: None,
        })
    }

    /// Dataset with generated names `x0, x1, ...`.
    pub fn unnamed(x: DMatrix<f64>, y: DVector<f64>, meta: Option<GroundTruth>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, names, meta)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn meta(&self) -> Option<&GroundTruth> {
        self.meta.as_ref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Overrides task detection. Classification needs `{0, 1}` labels.
    pub fn with_task(mut self, task: Task) -> Result<Self> {
        if task == Task::Classification && self.y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return invalid("classification targets must be 0 or 1");
        }
        self.forced_task = Some(task);
        Ok(self)
    }

    /// Classification iff the outcome holds exactly two distinct values,
    /// unless overridden.
    pub fn task(&self) -> Task {
        if let Some(t) = self.forced_task {
            return t;
        }
        let mut seen: Vec<f64> = Vec::with_capacity(3);
        for &v in self.y.iter() {
            if !seen.contains(&v) {
                seen.push(v);
                if seen.len() > 2 {
                    return Task::Regression;
                }
            }
        }
        if seen.len() == 2 {
            Task::Classification
        } else {
            Task::Regression
        }
    }

    /// Reads `path` and, when present, its `<stem>.meta.json` sidecar.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let csv_err = |source| Error::Csv {
            path: display.clone(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let header = reader.headers().map_err(csv_err)?.clone();
        let target_idx = header
            .iter()
            .position(|h| h == TARGET_COLUMN)
            .ok_or_else(|| Error::Schema(format!("{display}: missing `{TARGET_COLUMN}` column")))?;
        let names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target_idx)
            .map(|(_, h)| h.to_string())
            .collect();
        let p = names.len();
        let mut values = Vec::new();
        let mut y = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(csv_err)?;
            if record.len() != p + 1 {
                return Err(Error::Schema(format!(
                    "{display}: row {} has {} fields, expected {}",
                    row + 1,
                    record.len(),
                    p + 1
                )));
            }
            for (i, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Schema(format!("{display}: row {}: cannot parse `{field}`", row + 1))
                })?;
                if i == target_idx {
                    y.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        let n = y.len();
        let x = DMatrix::from_row_slice(n, p, &values);
        let meta_path = sidecar_path(path);
        let meta = if meta_path.exists() {
            Some(read_json::<GroundTruth>(&meta_path)?)
        } else {
            None
        };
        Self::new(x, DVector::from_vec(y), names, meta)
    }

    /// Writes the CSV (and sidecar when ground truth is present). `comment`
    /// lines are emitted first, each prefixed with `# `.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut out = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        let display = path.display().to_string();
        let csv_err = |source| Error::Csv {
            path: display.clone(),
            source,
        };
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push(TARGET_COLUMN);
        writer.write_record(&header).map_err(csv_err)?;
        let mut row = Vec::with_capacity(self.p() + 1);
        for i in 0..self.n() {
            row.clear();
            row.extend(self.x.row(i).iter().map(|v| v.to_string()));
            row.push(self.y[i].to_string());
            writer.write_record(&row).map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Schema(format!("{display}: {e}")))?;
        out.push_str(&String::from_utf8_lossy(&bytes));
        write_file(path, out.as_bytes())?;
        if let Some(meta) = &self.meta {
            write_json(&sidecar_path(path), meta)?;
        }
        Ok(())
    }
}

/// `data/sim.csv` → `data/sim.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Assignment of samples to `k` test folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    assignments: Vec<usize>,
    stratified: bool,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn stratified(&self) -> bool {
        self.stratified
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Shuffled K-fold assignment, optionally stratified on a label vector.
///
/// Samples are shuffled within each stratum and dealt round-robin; the deal
/// continues across strata so overall fold sizes also differ by at most one.
pub fn kfold_split(
    n: usize,
    k: usize,
    stratify_on: Option<&[f64]>,
    rng: &RngStream,
) -> Result<FoldPlan> {
    if k < 2 {
        return invalid(format!("fold count must be at least 2, got {k}"));
    }
    if k > n {
        return invalid(format!("fold count {k} exceeds sample count {n}"));
    }
    let mut strata: Vec<Vec<usize>> = match stratify_on {
        None => vec![(0..n).collect()],
        Some(labels) => {
            if labels.len() != n {
                return invalid(format!("{} labels for {n} samples", labels.len()));
            }
            let mut keys: Vec<f64> = Vec::new();
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for (i, &l) in labels.iter().enumerate() {
                match keys.iter().position(|&v| v == l) {
                    Some(g) => groups[g].push(i),
                    None => {
                        keys.push(l);
                        groups.push(vec![i]);
                    }
                }
            }
            // Order strata by label value so the plan does not depend on row order.
            let mut order: Vec<usize> = (0..keys.len()).collect();
            order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
            let groups: Vec<Vec<usize>> = order.into_iter().map(|g| groups[g].clone()).collect();
            if let Some(small) = groups.iter().find(|g| g.len() < k) {
                return invalid(format!(
                    "stratum of size {} is smaller than fold count {k}",
                    small.len()
                ));
            }
            groups
        }
    };
    let mut r = rng.rng();
    let mut assignments = vec![0usize; n];
    let mut next = 0usize;
    for stratum in strata.iter_mut() {
        stratum.shuffle(&mut r);
        for &i in stratum.iter() {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified: stratify_on.is_some(),
    })
}

/// Column location and scale learned on one matrix and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardization {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.iter().sum::<f64>() / n as f64;
            let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            let is_const = sd <= f64::EPSILON * mean.abs().max(1.0) * 4.0;
            means.push(mean);
            sds.push(if is_const { 0.0 } else { sd });
            constant.push(is_const);
        }
        Self {
            means,
            sds,
            constant,
        }
    }

    /// Multiplier applied after centering; zero for constant columns.
    pub fn scale(&self, j: usize) -> f64 {
        if self.constant[j] {
            0.0
        } else {
            1.0 / self.sds[j]
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.scale(j));
            for v in col.iter_mut() {
                *v = (*v - m) * s;
            }
        }
        z
    }
}

/// Output of [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub data: DMatrix<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub constant: Vec<bool>,
}

/// Centers every column and scales to unit sample sd. Constant columns map to
/// zeros and are flagged.
pub fn standardize(x: &DMatrix<f64>) -> Standardized {
    let s = Standardization::fit(x);
    Standardized {
        data: s.apply(x),
        means: s.means,
        sds: s.sds,
        constant: s.constant,
    }
}

/// Rows `idx` of `x`.
pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select_entries(y: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| y[idx[i]])
}

/// Columns `idx` of `x`.
pub fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |i, j| x[(i, idx[j])])
}
