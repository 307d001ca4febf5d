//! Run configuration: a flat JSON file overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use hcpi::bench::{BenchConfig, Method};
use hcpi::conservation::{default_epsilon, ConservationConfig};
use hcpi::cpi::{HcpiConfig, DEFAULT_N_PERM};
use hcpi::data::Task;
use hcpi::learners::{LearnerKind, LearnerSpec, LossKind};
use hcpi::report::AnalysisOptions;
use hcpi::simgen::{Scenario, SimConfig, DEFAULT_BLOCKS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Analyze,
    Bench,
    Export,
    Fixtures,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Analyze => "analyze",
            Command::Bench => "bench",
            Command::Export => "export",
            Command::Fixtures => "fixtures",
        }
    }
}

/// Every setting of every command. Unset optional keys fall back to the
/// command's own default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Command>,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub n: usize,
    pub blocks: Vec<usize>,
    pub rho_max: f64,
    pub scenario: Scenario,
    pub support_size: usize,
    pub snr: f64,

    pub model: Option<LearnerKind>,
    pub loss: Option<LossKind>,
    pub problem: Option<Task>,
    /// Defaults to 5 for `analyze` and 10 for `bench`.
    pub folds: Option<usize>,
    pub n_perm: usize,
    pub alpha: f64,
    pub conserve: bool,
    pub epsilon: f64,
    pub leaves_only: bool,

    pub rho_grid: Vec<f64>,
    pub snr_grid: Vec<f64>,
    pub repetitions: usize,
    pub methods: Vec<Method>,

    /// `export`: display the conserved inference.
    pub conserved: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let bench = BenchConfig::default();
        Self {
            task: None,
            input: None,
            out_dir: PathBuf::from("."),
            seed: 0,
            n: sim.n,
            blocks: DEFAULT_BLOCKS.to_vec(),
            rho_max: sim.rho_max,
            scenario: sim.scenario,
            support_size: sim.support_size,
            snr: sim.snr,
            model: None,
            loss: None,
            problem: None,
            folds: None,
            n_perm: DEFAULT_N_PERM,
            alpha: 0.05,
            conserve: false,
            epsilon: default_epsilon(),
            leaves_only: false,
            rho_grid: bench.rho_grid,
            snr_grid: bench.snr_grid,
            repetitions: bench.repetitions,
            methods: bench.methods,
            conserved: false,
        }
    }
}

impl RunConfig {
    /// Parses a configuration file; unknown keys are rejected.
    pub fn from_json_str(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).map_err(|e| hcpi::Error::Schema(format!("config: {e}")).into())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| hcpi::Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text).with_context(|| format!("reading {}", path.display()))
    }

    /// One-line JSON echo written into output headers.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn header(&self) -> String {
        format!("config: {}", self.echo())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let task = self.task.context("no command given")?;
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!(invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if let Some(k) = self.folds {
            if k < 2 {
                bail!(invalid(format!("K must be at least 2, got {k}")));
            }
        }
        if matches!(task, Command::Analyze | Command::Export) {
            match &self.input {
                None => bail!(invalid(format!("{} needs an input file", task.as_str()))),
                Some(p) if !p.is_file() => bail!(invalid(format!("input file {} does not exist", p.display()))),
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n: self.n,
            block_sizes: self.blocks.clone(),
            rho_max: self.rho_max,
            scenario: self.scenario,
            support_size: self.support_size,
            snr: self.snr,
            seed: self.seed,
        }
    }

    fn conservation(&self) -> ConservationConfig {
        ConservationConfig {
            epsilon: self.epsilon,
            ..Default::default()
        }
    }

    /// Learner and loss for a dataset of the given task.
    pub fn learner_and_loss(&self, task: Task) -> anyhow::Result<(LearnerKind, LossKind)> {
        let model = self.model.unwrap_or(match task {
            Task::Regression => LearnerKind::Ridge,
            Task::Classification => LearnerKind::Logistic,
        });
        if model == LearnerKind::Logistic && task == Task::Regression {
            bail!(invalid("the logistic model needs a binary target"));
        }
        let loss = self.loss.unwrap_or(match model {
            LearnerKind::Logistic => LossKind::CrossEntropy,
            LearnerKind::Ridge | LearnerKind::Mlp => LossKind::Rmse,
        });
        Ok((model, loss))
    }

    pub fn analysis_options(&self, task: Task) -> anyhow::Result<AnalysisOptions> {
        let (model, loss) = self.learner_and_loss(task)?;
        let hcpi = HcpiConfig {
            learner: LearnerSpec::of_kind(model),
            loss,
            folds: self.folds.unwrap_or(HcpiConfig::default().folds),
            n_perm: self.n_perm,
            leaves_only: self.leaves_only,
            ..Default::default()
        };
        hcpi.validate()?;
        let conservation = self.conserve.then(|| self.conservation());
        if let Some(c) = &conservation {
            c.validate()?;
        }
        Ok(AnalysisOptions {
            hcpi,
            alpha: self.alpha,
            conservation,
            seed: self.seed,
        })
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            sim: self.sim_config(),
            rho_grid: self.rho_grid.clone(),
            snr_grid: self.snr_grid.clone(),
            repetitions: self.repetitions,
            methods: self.methods.clone(),
            alpha: self.alpha,
            learner: self.model.map(LearnerSpec::of_kind),
            folds: self.folds.unwrap_or(BenchConfig::default().folds),
            n_perm: self.n_perm,
            conservation: self.conservation(),
            seed: self.seed,
        }
    }
}

fn invalid(msg: impl Into<String>) -> hcpi::Error {
    hcpi::Error::InvalidArgument(msg.into())
}
