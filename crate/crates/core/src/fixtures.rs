//! Checked-in regression fixtures and their generator.
//!
//! Each fixture directory holds `data.csv` (with its `data.meta.json`
//! sidecar), `tree.json`, `results.json` and `expected.json`. A top-level
//! `manifest.json` records the seed and the configuration of every fixture.

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::conservation::ConservationConfig;
use crate::cpi::HcpiConfig;
use crate::data::{write_json, Dataset};
use crate::error::{Error, Result};
use crate::report::{analyze, AnalysisOptions, AnalysisReport};
use crate::rng::RngStream;
use crate::simgen::{simulate_detailed, simulate_active_block, SimConfig};

pub const FIXTURE_SEED: u64 = 20240;

/// How one fixture's outcome is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FixtureDesign {
    /// Sparse linear outcome from the simulator.
    Simulated,
    /// Outcome carried by every variable of one block.
    ActiveBlock { block: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub name: String,
    pub design: FixtureDesign,
    pub sim: SimConfig,
    pub hcpi: HcpiConfig,
    pub alpha: f64,
    pub conservation: ConservationConfig,
    pub analysis_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub seed: u64,
    pub fixtures: Vec<FixtureSpec>,
}

/// Summary outputs pinned by the fixture tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedOutputs {
    /// Node ids by decreasing mean importance, ties by id.
    pub importance_ranks: Vec<usize>,
    pub selected: Vec<usize>,
    pub frontier: Vec<usize>,
    pub selected_conserved: Vec<usize>,
    pub frontier_conserved: Vec<usize>,
}

impl ExpectedOutputs {
    pub fn from_report(report: &AnalysisReport) -> Result<Self> {
        let conserved = report
            .conserved
            .as_ref()
            .ok_or_else(|| Error::Schema("fixture report lacks the conserved inference".into()))?;
        let mut ranks: Vec<usize> = report.inference.nodes.iter().map(|n| n.id).collect();
        let mean = |id: usize| report.inference.node(id).map_or(f64::NEG_INFINITY, |n| n.psi_mean);
        ranks.sort_by(|&a, &b| mean(b).total_cmp(&mean(a)).then(a.cmp(&b)));
        Ok(Self {
            importance_ranks: ranks,
            selected: report.inference.selected_nodes(),
            frontier: report.inference.frontier.clone(),
            selected_conserved: conserved.selected_nodes(),
            frontier_conserved: conserved.frontier.clone(),
        })
    }
}

/// The fixture set for `seed`.
pub fn fixture_manifest(seed: u64) -> FixtureManifest {
    let root = RngStream::new(seed);
    let seeds = |i: u64| {
        let s = root.derive(i);
        (s.derive(0).rng().next_u64(), s.derive(1).rng().next_u64())
    };
    let (p24_sim, p24_run) = seeds(0);
    let (p8_sim, p8_run) = seeds(1);
    FixtureManifest {
        seed,
        fixtures: vec![
            FixtureSpec {
                name: "p24".into(),
                design: FixtureDesign::ActiveBlock { block: 0 },
                sim: SimConfig {
                    n: 300,
                    block_sizes: vec![6, 6, 6, 6],
                    rho_max: 0.95,
                    support_size: 0,
                    snr: 2.0,
                    seed: p24_sim,
                    ..Default::default()
                },
                hcpi: HcpiConfig {
                    folds: 10,
                    ..Default::default()
                },
                alpha: 0.05,
                conservation: ConservationConfig::default(),
                analysis_seed: p24_run,
            },
            FixtureSpec {
                name: "p8".into(),
                design: FixtureDesign::Simulated,
                sim: SimConfig {
                    n: 120,
                    block_sizes: vec![2, 2, 4],
                    rho_max: 0.5,
                    support_size: 2,
                    snr: 4.0,
                    seed: p8_sim,
                    ..Default::default()
                },
                hcpi: HcpiConfig {
                    folds: 5,
                    n_perm: 20,
                    ..Default::default()
                },
                alpha: 0.05,
                conservation: ConservationConfig::default(),
                analysis_seed: p8_run,
            },
        ],
    }
}

fn fixture_dataset(spec: &FixtureSpec) -> Result<Dataset> {
    let sim = match spec.design {
        FixtureDesign::Simulated => simulate_detailed(&spec.sim)?,
        FixtureDesign::ActiveBlock { block } => simulate_active_block(&spec.sim, block)?,
    };
    Ok(sim.dataset)
}

/// Runs the analysis a fixture pins.
pub fn fixture_report(spec: &FixtureSpec, dataset: &Dataset) -> Result<AnalysisReport> {
    let opts = AnalysisOptions {
        hcpi: spec.hcpi.clone(),
        alpha: spec.alpha,
        conservation: Some(spec.conservation),
        seed: spec.analysis_seed,
    };
    let config = serde_json::to_value(spec).map_err(|e| Error::Schema(e.to_string()))?;
    analyze(dataset, &opts, config)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Rewrites every fixture under `dir`; returns the files written.
pub fn regenerate_fixtures(seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = fixture_manifest(seed);
    create_dir(dir)?;
    let mut written = Vec::new();
    for spec in &manifest.fixtures {
        let sub = dir.join(&spec.name);
        create_dir(&sub)?;
        let dataset = fixture_dataset(spec)?;
        let data = sub.join("data.csv");
        dataset.write_csv(&data, Some(&format!("fixture: {}  seed: {seed}", spec.name)))?;
        written.push(data);
        written.push(sub.join("data.meta.json"));
        let report = fixture_report(spec, &dataset)?;
        for (file, value) in [
            ("tree.json", serde_json::to_value(&report.tree)),
            ("results.json", serde_json::to_value(&report)),
            ("expected.json", serde_json::to_value(ExpectedOutputs::from_report(&report)?)),
        ] {
            let path = sub.join(file);
            write_json(&path, &value.map_err(|e| Error::Schema(e.to_string()))?)?;
            written.push(path);
        }
    }
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    written.push(path);
    Ok(written)
}
