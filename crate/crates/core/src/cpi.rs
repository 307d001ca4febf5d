//! Conditional permutation importance for every node of a dendrogram,
//! cross-fitted over K folds.

use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::DendrogramTree;
use crate::data::{kfold_split, select_columns, select_entries, select_rows, write_file, Dataset, Task};
use crate::error::{invalid, Error, Result};
use crate::learners::{
    default_lambda_grid, fit_model, loss, FittedModel, Imputer, ImputerFactory, LearnerKind, LearnerSpec,
    LossKind, TrainingReport,
};
use crate::rng::RngStream;

pub const DEFAULT_N_PERM: usize = 50;

/// Values for the group columns: imputed mean plus residuals shuffled as
/// whole rows. Rows whose permutation is the identity keep the observed
/// values bit for bit.
fn permuted_group(
    observed: &DMatrix<f64>,
    pred: &DMatrix<f64>,
    resid: &DMatrix<f64>,
    perm: &[usize],
) -> DMatrix<f64> {
    let (n, g) = observed.shape();
    DMatrix::from_fn(n, g, |i, k| {
        if perm[i] == i {
            observed[(i, k)]
        } else {
            pred[(i, k)] + resid[(perm[i], k)]
        }
    })
}

fn draw_permutation(n: usize, stream: &RngStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream.rng());
    perm
}

/// Draws `X̃`: a copy of `x_test` whose group columns are replaced by a
/// conditional sample given the other columns.
pub fn conditional_sample(imputer: &Imputer, x_test: &DMatrix<f64>, rng: &RngStream) -> Result<DMatrix<f64>> {
    let (pred, resid) = imputer.predict_with_residuals(x_test)?;
    let group = imputer.group();
    let observed = select_columns(x_test, group);
    let perm = draw_permutation(x_test.nrows(), rng);
    let values = permuted_group(&observed, &pred, &resid, &perm);
    let mut out = x_test.clone();
    for (k, &j) in group.iter().enumerate() {
        out.set_column(j, &values.column(k));
    }
    Ok(out)
}

/// Mean loss increase over `n_perm` conditional samples of the group.
/// Permutation `r` draws from `rng.derive(r)`.
pub fn node_importance(
    model: &FittedModel,
    imputer: &Imputer,
    x_test: &DMatrix<f64>,
    y_test: &DVector<f64>,
    loss_kind: LossKind,
    n_perm: usize,
    rng: &RngStream,
) -> Result<f64> {
    if n_perm < 1 {
        return invalid("n_perm must be at least 1");
    }
    if x_test.nrows() != y_test.len() {
        return invalid(format!("{} rows vs {} targets", x_test.nrows(), y_test.len()));
    }
    let head = loss_kind.head();
    let base = model.prepare(x_test, head)?;
    let reference = loss(loss_kind, y_test, base.output())?;
    let (pred, resid) = imputer.predict_with_residuals(x_test)?;
    let group = imputer.group();
    let observed = select_columns(x_test, group);
    let mut sum = 0.0;
    let mut comp = 0.0;
    for r in 0..n_perm {
        let perm = draw_permutation(x_test.nrows(), &rng.derive(r as u64));
        let values = permuted_group(&observed, &pred, &resid, &perm);
        let out = model.output_substituted(&base, x_test, group, &values);
        let d = loss(loss_kind, y_test, &out)? - reference;
        // Kahan summation
        let t = d - comp;
        let s = sum + t;
        comp = (s - sum) - t;
        sum = s;
    }
    Ok(sum / n_perm as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HcpiConfig {
    pub learner: LearnerSpec,
    pub loss: LossKind,
    pub folds: usize,
    pub n_perm: usize,
    /// Restrict evaluation to the leaves (flat CPI).
    pub leaves_only: bool,
    /// Penalty grid for the conditional imputers.
    pub imputer_grid: Vec<f64>,
}

impl Default for HcpiConfig {
    fn default() -> Self {
        Self {
            learner: LearnerSpec::default(),
            loss: LossKind::Rmse,
            folds: 5,
            n_perm: DEFAULT_N_PERM,
            leaves_only: false,
            imputer_grid: default_lambda_grid(),
        }
    }
}

impl HcpiConfig {
    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        if self.folds < 2 {
            return invalid(format!("K must be at least 2, got {}", self.folds));
        }
        if self.n_perm < 1 {
            return invalid("n_perm must be at least 1");
        }
        if self.imputer_grid.is_empty() {
            return invalid("imputer penalty grid must not be empty");
        }
        let head_ok = match self.learner.kind {
            LearnerKind::Ridge | LearnerKind::Mlp => self.loss == LossKind::Rmse,
            LearnerKind::Logistic => self.loss != LossKind::Rmse,
        };
        if !head_ok {
            return invalid(format!(
                "loss {} is not compatible with a {} model",
                self.loss.as_str(),
                self.learner.kind.as_str()
            ));
        }
        Ok(())
    }
}

/// Raw and corrected importances, one row per node and one column per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub node_ids: Vec<usize>,
    pub psi: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_corrected: Option<Vec<Vec<f64>>>,
    pub folds: usize,
    pub n_perm: usize,
    pub loss: LossKind,
    pub learner: LearnerKind,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (denominator `len - 1`).
fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    (mean(v), sd(v))
}

impl ImportanceTable {
    pub fn row_of(&self, node: usize) -> Option<usize> {
        if self.node_ids.get(node) == Some(&node) {
            return Some(node);
        }
        self.node_ids.iter().position(|&id| id == node)
    }

    pub fn psi_of(&self, node: usize) -> Option<&[f64]> {
        self.row_of(node).map(|r| self.psi[r].as_slice())
    }

    pub fn corrected_of(&self, node: usize) -> Option<&[f64]> {
        let r = self.row_of(node)?;
        self.psi_corrected.as_ref().map(|c| c[r].as_slice())
    }

    pub fn mean_psi(&self, node: usize) -> Option<f64> {
        self.psi_of(node).map(mean)
    }

    pub fn covers_all_nodes(&self, tree: &DendrogramTree) -> bool {
        self.node_ids.len() == tree.n_nodes() && self.node_ids.iter().enumerate().all(|(i, &id)| i == id)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("node_id,fold,psi,psi_corrected\n");
        for (r, &id) in self.node_ids.iter().enumerate() {
            for k in 0..self.folds {
                let corrected = self
                    .psi_corrected
                    .as_ref()
                    .map(|c| format!("{:?}", c[r][k]))
                    .unwrap_or_default();
                out.push_str(&format!("{id},{k},{:?},{corrected}\n", self.psi[r][k]));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut buf = Vec::new();
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(buf, "# {line}").expect("write to memory");
            }
        }
        buf.extend_from_slice(self.to_csv_string().as_bytes());
        write_file(path, &buf)
    }
}

/// Everything produced by one cross-fitted run.
#[derive(Debug, Clone)]
pub struct HcpiRun {
    pub table: ImportanceTable,
    pub models: Vec<FittedModel>,
    pub reports: Vec<TrainingReport>,
    /// Number of node-importance evaluations performed.
    pub evaluations: usize,
}

struct FoldResult {
    psi: Vec<f64>,
    model: FittedModel,
    report: TrainingReport,
}

fn degenerate(fold: usize, e: Error) -> Error {
    match e {
        Error::InvalidArgument(message) => Error::DegenerateFold { fold, message },
        other => other,
    }
}

/// Runs conditional permutation importance over every node of `tree` (or
/// every leaf with `leaves_only`) on K cross-fitting folds.
///
/// Stream layout under `seed`: `derive(0)` splits the folds; fold `k` uses
/// `derive(1).derive(k)`, whose `derive(0)` trains the model and
/// `derive(1).derive(node)` draws the permutations of that node.
pub fn run_hcpi(dataset: &Dataset, tree: &DendrogramTree, cfg: &HcpiConfig, seed: u64) -> Result<HcpiRun> {
    cfg.validate()?;
    let p = dataset.p();
    if tree.p() != p {
        return invalid(format!("tree has {} leaves but data has {p} columns", tree.p()));
    }
    let root = RngStream::new(seed);
    let stratify: Option<Vec<f64>> = match dataset.task() {
        Task::Classification => Some(dataset.y().iter().copied().collect()),
        Task::Regression => None,
    };
    let plan = kfold_split(dataset.n(), cfg.folds, stratify.as_deref(), &root.derive(0))?;
    let nodes: Vec<usize> = if cfg.leaves_only {
        (0..p).collect()
    } else {
        (0..tree.n_nodes()).collect()
    };
    let counter = AtomicUsize::new(0);

    let results: Vec<Result<FoldResult>> = (0..cfg.folds)
        .into_par_iter()
        .map(|k| {
            let fold_stream = root.derive(1).derive(k as u64);
            let (tr, te) = (plan.train_indices(k), plan.test_indices(k));
            let x_train = select_rows(dataset.x(), &tr);
            let y_train = select_entries(dataset.y(), &tr);
            let x_test = select_rows(dataset.x(), &te);
            let y_test = select_entries(dataset.y(), &te);
            if y_train.iter().all(|&v| v == y_train[0]) {
                return Err(Error::DegenerateFold {
                    fold: k,
                    message: "training target is constant".into(),
                });
            }
            let (model, report) =
                fit_model(&cfg.learner, &x_train, &y_train, &fold_stream.derive(0)).map_err(|e| degenerate(k, e))?;
            let factory = ImputerFactory::new(&x_train, &cfg.imputer_grid).map_err(|e| degenerate(k, e))?;
            let perm_stream = fold_stream.derive(1);
            let psi: Vec<f64> = nodes
                .par_iter()
                .map(|&id| {
                    let members = tree.traversal(id)?;
                    let imputer = if members.len() == p {
                        Imputer::marginal(&x_train, members)?
                    } else {
                        factory.fit(members)?
                    };
                    let v = node_importance(
                        &model,
                        &imputer,
                        &x_test,
                        &y_test,
                        cfg.loss,
                        cfg.n_perm,
                        &perm_stream.derive(id as u64),
                    )?;
                    counter.fetch_add(1, Ordering::Relaxed);
                    if !v.is_finite() {
                        return Err(Error::DegenerateFold {
                            fold: k,
                            message: format!("non-finite importance at node {id}"),
                        });
                    }
                    Ok(v)
                })
                .collect::<Result<_>>()?;
            Ok(FoldResult { psi, model, report })
        })
        .collect();

    let mut psi = vec![vec![0.0; cfg.folds]; nodes.len()];
    let mut models = Vec::with_capacity(cfg.folds);
    let mut reports = Vec::with_capacity(cfg.folds);
    for (k, res) in results.into_iter().enumerate() {
        let fold = res?;
        for (r, v) in fold.psi.into_iter().enumerate() {
            psi[r][k] = v;
        }
        models.push(fold.model);
        reports.push(fold.report);
    }
    Ok(HcpiRun {
        table: ImportanceTable {
            node_ids: nodes,
            psi,
            psi_corrected: None,
            folds: cfg.folds,
            n_perm: cfg.n_perm,
            loss: cfg.loss,
            learner: cfg.learner.kind,
        },
        models,
        reports,
        evaluations: counter.into_inner(),
    })
}
