//! End-to-end analysis of one dataset and its serialized results.

use serde::{Deserialize, Serialize};

use crate::cluster::{ward_cluster, DendrogramTree};
use crate::conservation::{infer_with_conservation, ConservationConfig, ConservationDiagnostics};
use crate::cpi::{run_hcpi, HcpiConfig, ImportanceTable};
use crate::data::{Dataset, Task};
use crate::error::{invalid, Error, Result};
use crate::inference::{infer, InferenceResult};
use crate::learners::TrainingReport;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub hcpi: HcpiConfig,
    pub alpha: f64,
    /// Runs the conserved pipeline alongside the raw one.
    pub conservation: Option<ConservationConfig>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// Echo of the configuration that produced the report.
    pub config: serde_json::Value,
    pub n: usize,
    pub p: usize,
    pub names: Vec<String>,
    pub task: Task,
    pub tree: DendrogramTree,
    /// Raw and (with conservation) corrected importances.
    pub importance: ImportanceTable,
    pub inference: InferenceResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conserved: Option<InferenceResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conservation: Option<ConservationDiagnostics>,
    pub evaluations: usize,
    pub training: Vec<TrainingReport>,
}

/// Clusters the columns, estimates importances and runs inference.
pub fn analyze(dataset: &Dataset, opts: &AnalysisOptions, config: serde_json::Value) -> Result<AnalysisReport> {
    if opts.conservation.is_some() && opts.hcpi.leaves_only {
        return invalid("conservation needs the full tree; drop leaves-only mode");
    }
    let tree = ward_cluster(dataset.x())?;
    let run = run_hcpi(dataset, &tree, &opts.hcpi, opts.seed)?;
    let inference = infer(&tree, &run.table, opts.alpha, false)?;
    let (importance, conserved, conservation) = match &opts.conservation {
        Some(cfg) => {
            let (result, table, diag) = infer_with_conservation(&tree, &run.table, cfg, opts.alpha)?;
            (table, Some(result), Some(diag))
        }
        None => (run.table, None, None),
    };
    Ok(AnalysisReport {
        config,
        n: dataset.n(),
        p: dataset.p(),
        names: dataset.names().to_vec(),
        task: dataset.task(),
        tree,
        importance,
        inference,
        conserved,
        conservation,
        evaluations: run.evaluations,
        training: run.reports,
    })
}

impl AnalysisReport {
    /// Parses a results file, naming the offending field on failure.
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("results file: {e}")))
    }

    /// Tidy per-node inference table; one block per pipeline.
    pub fn inference_csv(&self) -> String {
        let mut out = String::from("pipeline,node_id,members,psi_mean,psi_sd,p_raw,p_h,p_tilde,selected,frontier\n");
        let mut blocks = vec![(pipeline_name(&self.inference), &self.inference)];
        if let Some(c) = &self.conserved {
            blocks.push((pipeline_name(c), c));
        }
        for (name, result) in blocks {
            for n in &result.nodes {
                let members: Vec<String> = n.members.iter().map(|j| j.to_string()).collect();
                out.push_str(&format!(
                    "{name},{},{},{:?},{:?},{:?},{:?},{:?},{},{}\n",
                    n.id,
                    members.join(" "),
                    n.psi_mean,
                    n.psi_sd,
                    n.p_raw,
                    n.p_h,
                    n.p_tilde,
                    n.selected,
                    result.frontier.contains(&n.id)
                ));
            }
        }
        out
    }
}

fn pipeline_name(result: &InferenceResult) -> &'static str {
    match (result.mode, result.conserved) {
        (crate::inference::InferenceMode::Flat, _) => "cpi_flat",
        (_, true) => "hcpi_ic",
        (_, false) => "hcpi",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{simulate, SimConfig};

    fn toy() -> Dataset {
        simulate(&SimConfig {
            n: 80,
            block_sizes: vec![3, 3],
            support_size: 2,
            seed: 2,
            ..Default::default()
        })
        .unwrap()
    }

    fn opts(conserve: bool, leaves_only: bool) -> AnalysisOptions {
        AnalysisOptions {
            hcpi: HcpiConfig {
                folds: 5,
                n_perm: 5,
                leaves_only,
                ..Default::default()
            },
            alpha: 0.05,
            conservation: conserve.then(ConservationConfig::default),
            seed: 1,
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let r = analyze(&toy(), &opts(true, false), serde_json::json!({"k": 1})).unwrap();
        assert_eq!(r.inference.nodes.len(), 11);
        assert!(r.importance.psi_corrected.is_some());
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(AnalysisReport::from_json_str(&text).unwrap(), r);
        let csv = r.inference_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 11);
    }

    #[test]
    fn missing_field_is_named() {
        let r = analyze(&toy(), &opts(false, true), serde_json::Value::Null).unwrap();
        assert_eq!(r.inference.nodes.len(), 6);
        let mut v = serde_json::to_value(&r).unwrap();
        v.as_object_mut().unwrap().remove("inference");
        let err = AnalysisReport::from_json_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("inference"), "{err}");
    }

    #[test]
    fn conservation_requires_full_tree() {
        assert!(analyze(&toy(), &opts(true, true), serde_json::Value::Null).is_err());
    }
}
