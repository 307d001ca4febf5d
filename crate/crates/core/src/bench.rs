//! Monte Carlo benchmark over a grid of correlation levels and SNRs.

use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, StudentsT};

use crate::cluster::ward_cluster;
use crate::conservation::{conserve, ConservationConfig};
use crate::cpi::{mean_sd, run_hcpi, HcpiConfig, DEFAULT_N_PERM};
use crate::data::{write_file, write_json};
use crate::error::{invalid, Error, Result};
use crate::inference::{infer, InferenceResult};
use crate::learners::{LearnerKind, LearnerSpec, LossKind};
use crate::rng::RngStream;
use crate::simgen::{simulate, Scenario, SimConfig};

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return invalid(format!("{} scores vs {} labels", scores.len(), truth.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return invalid("scores must not be NaN");
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return invalid("AUC needs both positive and negative labels");
    }
    // Midranks of the pooled scores.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(truth).filter(|(_, &t)| t).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// True when any selected variable lies outside the support.
pub fn fwer_trial(selected_leaves: &[usize], support: &[usize]) -> bool {
    selected_leaves.iter().any(|j| !support.contains(j))
}

/// True when some selected group contains only null variables.
pub fn group_false_discovery(selected_groups: &[&[usize]], support: &[usize]) -> bool {
    selected_groups.iter().any(|g| g.iter().all(|j| !support.contains(j)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hcpi,
    HcpiIc,
    CpiFlat,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Hcpi => "hcpi",
            Method::HcpiIc => "hcpi_ic",
            Method::CpiFlat => "cpi_flat",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "hcpi" => Ok(Method::Hcpi),
            "hcpi_ic" => Ok(Method::HcpiIc),
            "cpi_flat" => Ok(Method::CpiFlat),
            other => Err(format!("unknown method `{other}` (expected hcpi, hcpi_ic or cpi_flat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Template; `rho_max`, `snr` and `seed` are overridden per run.
    pub sim: SimConfig,
    pub rho_grid: Vec<f64>,
    pub snr_grid: Vec<f64>,
    pub repetitions: usize,
    pub methods: Vec<Method>,
    pub alpha: f64,
    /// Defaults to ridge for the linear scenario and the MLP otherwise.
    pub learner: Option<LearnerSpec>,
    pub folds: usize,
    pub n_perm: usize,
    pub conservation: ConservationConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            rho_grid: vec![0.3, 0.9],
            snr_grid: vec![2.0],
            repetitions: 30,
            methods: vec![Method::Hcpi, Method::HcpiIc, Method::CpiFlat],
            alpha: 0.05,
            learner: None,
            folds: 10,
            n_perm: DEFAULT_N_PERM,
            conservation: ConservationConfig::default(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return invalid("repetitions must be at least 1");
        }
        if self.methods.is_empty() {
            return invalid("at least one method is required");
        }
        if self.rho_grid.is_empty() || self.snr_grid.is_empty() {
            return invalid("grids must not be empty");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        for (rho, snr) in self.grid() {
            SimConfig {
                rho_max: rho,
                snr,
                ..self.sim.clone()
            }
            .validate()?;
        }
        self.hcpi_config(false).validate()?;
        self.conservation.validate()
    }

    /// `(rho_max, snr)` pairs in row-major order.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.rho_grid
            .iter()
            .flat_map(|&r| self.snr_grid.iter().map(move |&s| (r, s)))
            .collect()
    }

    pub fn learner_spec(&self) -> LearnerSpec {
        self.learner.clone().unwrap_or_else(|| match self.sim.scenario {
            Scenario::Linear => LearnerSpec::of_kind(LearnerKind::Ridge),
            Scenario::Nonlinear => LearnerSpec::of_kind(LearnerKind::Mlp),
        })
    }

    fn hcpi_config(&self, leaves_only: bool) -> HcpiConfig {
        HcpiConfig {
            learner: self.learner_spec(),
            loss: LossKind::Rmse,
            folds: self.folds,
            n_perm: self.n_perm,
            leaves_only,
            ..Default::default()
        }
    }
}

/// One method on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub rho_max: f64,
    pub snr: f64,
    pub repetition: usize,
    /// Missing when the support is empty or covers every variable.
    pub auc: Option<f64>,
    pub any_false_discovery: bool,
    pub group_false_discovery: bool,
    /// Selected variables (leaf level).
    pub n_selected: usize,
    pub n_selected_nodes: usize,
    pub evaluations: usize,
    pub wall_time_seconds: f64,
    pub error: Option<String>,
    /// Raw leaf p-values indexed by variable.
    #[serde(skip)]
    pub leaf_p_raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub method: Method,
    pub rho_max: f64,
    pub snr: f64,
    pub completed: usize,
    pub failed: usize,
    pub auc_mean: Option<f64>,
    /// 95% t interval of the mean AUC.
    pub auc_ci: Option<[f64; 2]>,
    pub fwer: f64,
    /// Exact (Clopper–Pearson) 95% interval.
    pub fwer_ci: [f64; 2],
    pub group_fwer: f64,
    pub group_fwer_ci: [f64; 2],
    pub mean_selected: f64,
    pub mean_wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
}

/// Exact binomial confidence interval for `k` successes out of `n`.
pub fn clopper_pearson(k: usize, n: usize, level: f64) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let a = (1.0 - level) / 2.0;
    let lower = if k == 0 {
        0.0
    } else {
        Beta::new(k as f64, (n - k + 1) as f64).expect("beta").inverse_cdf(a)
    };
    let upper = if k == n {
        1.0
    } else {
        Beta::new((k + 1) as f64, (n - k) as f64).expect("beta").inverse_cdf(1.0 - a)
    };
    [lower, upper]
}

fn row_from_inference(
    method: Method,
    (rho, snr, rep): (f64, f64, usize),
    result: &InferenceResult,
    support: &[usize],
    p: usize,
    evaluations: usize,
    seconds: f64,
) -> Result<BenchRow> {
    let leaf_p = result.leaf_p_values();
    let mut scores = vec![0.0; p];
    for &(j, ph) in &leaf_p {
        scores[j] = 1.0 - ph;
    }
    let truth: Vec<bool> = (0..p).map(|j| support.contains(&j)).collect();
    let auc = if support.is_empty() || support.len() == p {
        None
    } else {
        Some(auc(&scores, &truth)?)
    };
    let selected_leaves = result.selected_leaves();
    let groups: Vec<&[usize]> = result
        .nodes
        .iter()
        .filter(|n| n.selected)
        .map(|n| n.members.as_slice())
        .collect();
    let mut leaf_p_raw = vec![f64::NAN; p];
    for n in result.nodes.iter().filter(|n| n.members.len() == 1) {
        leaf_p_raw[n.members[0]] = n.p_raw;
    }
    Ok(BenchRow {
        method,
        rho_max: rho,
        snr,
        repetition: rep,
        auc,
        any_false_discovery: fwer_trial(&selected_leaves, support),
        group_false_discovery: group_false_discovery(&groups, support),
        n_selected: selected_leaves.len(),
        n_selected_nodes: groups.len(),
        evaluations,
        wall_time_seconds: seconds,
        error: None,
        leaf_p_raw,
    })
}

fn failed_row(method: Method, (rho, snr, rep): (f64, f64, usize), e: &Error) -> BenchRow {
    BenchRow {
        method,
        rho_max: rho,
        snr,
        repetition: rep,
        auc: None,
        any_false_discovery: false,
        group_false_discovery: false,
        n_selected: 0,
        n_selected_nodes: 0,
        evaluations: 0,
        wall_time_seconds: 0.0,
        error: Some(e.to_string()),
        leaf_p_raw: Vec::new(),
    }
}

/// Seeds of a repetition: `(simulation, analysis)`.
fn repetition_seeds(seed: u64, grid_index: usize, rep: usize) -> (u64, u64) {
    let s = RngStream::new(seed).derive(grid_index as u64).derive(rep as u64);
    (s.derive(0).rng().next_u64(), s.derive(1).rng().next_u64())
}

fn try_repetition(cfg: &BenchConfig, grid_index: usize, rep: usize) -> Result<Vec<BenchRow>> {
    let (rho, snr) = cfg.grid()[grid_index];
    let key = (rho, snr, rep);
    let (sim_seed, run_seed) = repetition_seeds(cfg.seed, grid_index, rep);
    let data = simulate(&SimConfig {
        rho_max: rho,
        snr,
        seed: sim_seed,
        ..cfg.sim.clone()
    })?;
    let support = data.meta().map(|m| m.support.clone()).unwrap_or_default();
    let p = data.p();
    let mut rows = Vec::new();

    let wants = |m| cfg.methods.contains(&m);
    if wants(Method::Hcpi) || wants(Method::HcpiIc) {
        let start = Instant::now();
        let tree = ward_cluster(data.x())?;
        let run = run_hcpi(&data, &tree, &cfg.hcpi_config(false), run_seed)?;
        let hcpi_seconds = start.elapsed().as_secs_f64();
        if wants(Method::Hcpi) {
            let start = Instant::now();
            let result = infer(&tree, &run.table, cfg.alpha, false)?;
            let secs = hcpi_seconds + start.elapsed().as_secs_f64();
            rows.push(row_from_inference(Method::Hcpi, key, &result, &support, p, run.evaluations, secs)?);
        }
        if wants(Method::HcpiIc) {
            let start = Instant::now();
            let (table, _) = conserve(&tree, &run.table, &cfg.conservation)?;
            let result = infer(&tree, &table, cfg.alpha, true)?;
            let secs = hcpi_seconds + start.elapsed().as_secs_f64();
            rows.push(row_from_inference(Method::HcpiIc, key, &result, &support, p, run.evaluations, secs)?);
        }
    }
    if wants(Method::CpiFlat) {
        let start = Instant::now();
        let tree = ward_cluster(data.x())?;
        let run = run_hcpi(&data, &tree, &cfg.hcpi_config(true), run_seed)?;
        let result = infer(&tree, &run.table, cfg.alpha, false)?;
        let secs = start.elapsed().as_secs_f64();
        rows.push(row_from_inference(Method::CpiFlat, key, &result, &support, p, run.evaluations, secs)?);
    }
    Ok(rows)
}

/// Every requested method on one simulated dataset. Failures become
/// diagnostic rows.
pub fn run_repetition(cfg: &BenchConfig, grid_index: usize, rep: usize) -> Vec<BenchRow> {
    match try_repetition(cfg, grid_index, rep) {
        Ok(rows) => rows,
        Err(e) => {
            let (rho, snr) = cfg.grid()[grid_index];
            let mut methods = cfg.methods.clone();
            methods.sort();
            methods.dedup();
            methods.into_iter().map(|m| failed_row(m, (rho, snr, rep), &e)).collect()
        }
    }
}

fn summarize(method: Method, rho: f64, snr: f64, rows: &[&BenchRow]) -> BenchSummary {
    let ok: Vec<&&BenchRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let n = ok.len();
    let aucs: Vec<f64> = ok.iter().filter_map(|r| r.auc).collect();
    let (auc_mean, auc_ci) = if aucs.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_sd(&aucs);
        let half = if aucs.len() > 1 {
            let q = StudentsT::new(0.0, 1.0, (aucs.len() - 1) as f64)
                .expect("df")
                .inverse_cdf(0.975);
            q * s / (aucs.len() as f64).sqrt()
        } else {
            0.0
        };
        (Some(m), Some([m - half, m + half]))
    };
    let fd = ok.iter().filter(|r| r.any_false_discovery).count();
    let gfd = ok.iter().filter(|r| r.group_false_discovery).count();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    BenchSummary {
        method,
        rho_max: rho,
        snr,
        completed: n,
        failed: rows.len() - n,
        auc_mean,
        auc_ci,
        fwer: frac(fd),
        fwer_ci: clopper_pearson(fd, n, 0.95),
        group_fwer: frac(gfd),
        group_fwer_ci: clopper_pearson(gfd, n, 0.95),
        mean_selected: if n == 0 { 0.0 } else { ok.iter().map(|r| r.n_selected as f64).sum::<f64>() / n as f64 },
        mean_wall_time_seconds: if n == 0 {
            0.0
        } else {
            ok.iter().map(|r| r.wall_time_seconds).sum::<f64>() / n as f64
        },
    }
}

/// Runs every grid point and repetition. Rows are sorted by method, grid
/// point and repetition regardless of scheduling.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let grid = cfg.grid();
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..cfg.repetitions).map(move |r| (g, r)))
        .collect();
    let mut keyed: Vec<(Method, usize, usize, BenchRow)> = tasks
        .par_iter()
        .flat_map_iter(|&(g, r)| run_repetition(cfg, g, r).into_iter().map(move |row| (row.method, g, r, row)))
        .collect();
    keyed.sort_by_key(|(m, g, r, _)| (*m, *g, *r));
    let rows: Vec<BenchRow> = keyed.into_iter().map(|(_, _, _, row)| row).collect();

    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut summary = Vec::new();
    for &m in &methods {
        for &(rho, snr) in &grid {
            let subset: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.method == m && r.rho_max == rho && r.snr == snr)
                .collect();
            summary.push(summarize(m, rho, snr, &subset));
        }
    }
    Ok(BenchReport {
        config: cfg.clone(),
        rows,
        summary,
    })
}

impl BenchReport {
    pub fn rows_csv(&self, comment: Option<&str>) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        if let Some(c) = comment {
            for line in c.lines() {
                buf.extend_from_slice(format!("# {line}\n").as_bytes());
            }
        }
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Schema(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Schema(e.to_string()))?;
        drop(w);
        Ok(buf)
    }

    /// Writes `bench_rows.csv` and `bench_summary.json` into `dir`.
    pub fn write(&self, dir: &Path, comment: Option<&str>) -> Result<()> {
        write_file(&dir.join("bench_rows.csv"), &self.rows_csv(comment)?)?;
        write_json(&dir.join("bench_summary.json"), self)
    }
}
