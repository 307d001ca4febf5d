//! Command-line flags and their merge into a [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hcpi::bench::Method;
use hcpi::data::Task;
use hcpi::learners::{LearnerKind, LossKind};
use hcpi::simgen::Scenario;

use crate::config::{Command, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hcpi", version, about = "Hierarchical conditional permutation importance")]
pub struct Cli {
    /// JSON file with flat configuration keys; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Simulate a block-correlated dataset with known support.
    Simulate(DesignArgs),
    /// Cluster, estimate node importances and test them.
    Analyze(AnalyzeArgs),
    /// Repeated simulations comparing methods.
    Bench(BenchArgs),
    /// Dendrogram table and text tree from a results file.
    Export(ExportArgs),
    /// Rewrite the regression fixtures.
    Fixtures,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Problem {
    Regression,
    Classification,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Block sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<usize>>,
    #[arg(long)]
    pub rho_max: Option<f64>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub support_size: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: Option<LearnerKind>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub n_perm: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Dataset CSV with a `target` column.
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also run inference on the conserved importances.
    #[arg(long)]
    pub conserve: bool,
    /// Flat CPI over the leaves only.
    #[arg(long)]
    pub leaves_only: bool,
    /// Overrides task detection from the target column.
    #[arg(long, value_enum)]
    pub problem: Option<Problem>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub snr_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// `results.json` written by `analyze`.
    pub input: Option<PathBuf>,
    /// Show the conserved inference.
    #[arg(long)]
    pub conserved: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DesignArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.n, self.n);
        set(&mut cfg.blocks, self.blocks);
        set(&mut cfg.rho_max, self.rho_max);
        set(&mut cfg.scenario, self.scenario);
        set(&mut cfg.support_size, self.support_size);
        set(&mut cfg.snr, self.snr);
    }
}

impl ModelArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if self.model.is_some() {
            cfg.model = self.model;
        }
        if self.loss.is_some() {
            cfg.loss = self.loss;
        }
        if self.folds.is_some() {
            cfg.folds = self.folds;
        }
        set(&mut cfg.n_perm, self.n_perm);
        set(&mut cfg.alpha, self.alpha);
        set(&mut cfg.epsilon, self.epsilon);
    }
}

impl Cli {
    /// Configuration file (or defaults) with every given flag applied.
    pub fn into_config(self) -> anyhow::Result<(RunConfig, Option<usize>)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.out_dir, self.out_dir);
        let task = match self.command {
            Sub::Simulate(a) => {
                a.apply(&mut cfg);
                Command::Simulate
            }
            Sub::Analyze(a) => {
                if a.input.is_some() {
                    cfg.input = a.input;
                }
                a.model.apply(&mut cfg);
                cfg.conserve |= a.conserve;
                cfg.leaves_only |= a.leaves_only;
                if let Some(p) = a.problem {
                    cfg.problem = Some(match p {
                        Problem::Regression => Task::Regression,
                        Problem::Classification => Task::Classification,
                    });
                }
                Command::Analyze
            }
            Sub::Bench(a) => {
                a.design.apply(&mut cfg);
                a.model.apply(&mut cfg);
                set(&mut cfg.rho_grid, a.rho_grid);
                set(&mut cfg.snr_grid, a.snr_grid);
                set(&mut cfg.repetitions, a.repetitions);
                set(&mut cfg.methods, a.methods);
                Command::Bench
            }
            Sub::Export(a) => {
                if a.input.is_some() {
                    cfg.input = a.input;
                }
                cfg.conserved |= a.conserved;
                Command::Export
            }
            Sub::Fixtures => Command::Fixtures,
        };
        cfg.task = Some(task);
        Ok((cfg, self.threads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> RunConfig {
        Cli::try_parse_from(std::iter::once("hcpi").chain(args.iter().copied()))
            .unwrap()
            .into_config()
            .unwrap()
            .0
    }

    #[test]
    fn flags_override_defaults() {
        let cfg = parse(&["analyze", "d.csv", "--folds", "3", "--conserve", "--seed", "9", "--model", "mlp"]);
        assert_eq!(cfg.task, Some(Command::Analyze));
        assert_eq!(cfg.folds, Some(3));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model, Some(LearnerKind::Mlp));
        assert!(cfg.conserve);
        let cfg = parse(&["bench", "--methods", "hcpi,cpi_flat", "--blocks", "2,3"]);
        assert_eq!(cfg.methods, vec![Method::Hcpi, Method::CpiFlat]);
        assert_eq!(cfg.blocks, vec![2, 3]);
    }

    #[test]
    fn flag_wins_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"alpha": 0.1, "n_perm": 7}"#).unwrap();
        let p = path.to_str().unwrap();
        let cfg = parse(&["--config", p, "analyze", "x.csv", "--alpha", "0.2"]);
        assert_eq!(cfg.alpha, 0.2);
        assert_eq!(cfg.n_perm, 7);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Cli::try_parse_from(["hcpi", "analyze", "--model", "forest"]).is_err());
        assert!(Cli::try_parse_from(["hcpi", "bench", "--methods", "sage"]).is_err());
    }
}
