//! Fold-level t-tests, ancestor-max p-value adjustment and Bonferroni
//! selection over the tree.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cluster::DendrogramTree;
use crate::cpi::{mean_sd, ImportanceTable};
use crate::error::{invalid, Result};

/// Student-t distribution function with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 1.0;
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    StudentsT::new(0.0, 1.0, df).expect("df must be positive").cdf(t)
}

/// One-sided p-value for `H₁: E[ψ] > 0` from the fold values.
///
/// With zero spread the test degenerates: a positive mean gives 0, anything
/// else gives 1.
pub fn t_test_one_sided(psi: &[f64]) -> Result<f64> {
    let k = psi.len();
    if k < 2 {
        return invalid(format!("t-test needs at least 2 folds, got {k}"));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return invalid("importances must be finite");
    }
    let (m, s) = mean_sd(psi);
    if s == 0.0 {
        return Ok(if m > 0.0 { 0.0 } else { 1.0 });
    }
    let t = m / (s / (k as f64).sqrt());
    // 1 - F(t) = F(-t) by symmetry, avoiding cancellation in the tail.
    Ok(t_cdf(-t, (k - 1) as f64).clamp(0.0, 1.0))
}

/// `p_h(G) = max` of `p_raw` over `G` and all of its ancestors.
pub fn hierarchical_adjust(tree: &DendrogramTree, p_raw: &[f64]) -> Result<Vec<f64>> {
    if p_raw.len() != tree.n_nodes() {
        return invalid(format!("expected {} p-values, got {}", tree.n_nodes(), p_raw.len()));
    }
    let mut p_h = p_raw.to_vec();
    // Parents carry larger ids than their children.
    for id in (0..tree.n_nodes()).rev() {
        if let Some(parent) = tree.parent(id) {
            p_h[id] = p_h[id].max(p_h[parent]);
        }
    }
    Ok(p_h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Every node, ancestor-max adjustment.
    Hierarchical,
    /// Leaves only, no adjustment.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInference {
    pub id: usize,
    pub members: Vec<usize>,
    pub psi_mean: f64,
    pub psi_sd: f64,
    pub p_raw: f64,
    pub p_h: f64,
    pub p_tilde: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub mode: InferenceMode,
    /// Whether the conserved importances were tested.
    pub conserved: bool,
    pub alpha: f64,
    /// Bonferroni constant, the number of variables.
    pub correction: f64,
    pub nodes: Vec<NodeInference>,
    /// Selected nodes with no selected child.
    pub frontier: Vec<usize>,
}

impl InferenceResult {
    pub fn node(&self, id: usize) -> Option<&NodeInference> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn selected_nodes(&self) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.selected).map(|n| n.id).collect()
    }

    /// Variables whose own leaf node is selected.
    pub fn selected_leaves(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.selected && n.members.len() == 1)
            .map(|n| n.members[0])
            .collect()
    }

    /// `(variable, p)` for each leaf, using `p_h`.
    pub fn leaf_p_values(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter(|n| n.members.len() == 1)
            .map(|n| (n.members[0], n.p_h))
            .collect()
    }
}

/// `(p̃, selected)` per node with `p̃ = min(1, C·p)`.
pub fn bonferroni(p: &[f64], correction: f64, alpha: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&alpha) {
        return invalid(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    let p_tilde: Vec<f64> = p.iter().map(|&v| (correction * v).min(1.0)).collect();
    let selected = p_tilde.iter().map(|&v| v <= alpha).collect();
    Ok((p_tilde, selected))
}

/// Bonferroni selection at level `alpha` with `C = p` over a full tree,
/// together with its frontier.
pub fn bonferroni_select(
    tree: &DendrogramTree,
    p_h: &[f64],
    alpha: f64,
) -> Result<(Vec<f64>, Vec<bool>, Vec<usize>)> {
    if p_h.len() != tree.n_nodes() {
        return invalid(format!("expected {} p-values, got {}", tree.n_nodes(), p_h.len()));
    }
    let (p_tilde, selected) = bonferroni(p_h, tree.p() as f64, alpha)?;
    let frontier = (0..tree.n_nodes())
        .filter(|&id| {
            selected[id]
                && match tree.children(id) {
                    Some((l, r)) => !selected[l] && !selected[r],
                    None => true,
                }
        })
        .collect();
    Ok((p_tilde, selected, frontier))
}

/// Full pipeline on a table: t-test per row, adjustment, Bonferroni.
///
/// A table covering every node is tested hierarchically; a leaves-only
/// table is tested flat with `C = p`. With `use_corrected`, the conserved
/// importances are tested instead of the raw ones.
pub fn infer(tree: &DendrogramTree, table: &ImportanceTable, alpha: f64, use_corrected: bool) -> Result<InferenceResult> {
    let rows: &Vec<Vec<f64>> = if use_corrected {
        match &table.psi_corrected {
            Some(c) => c,
            None => return invalid("table has no corrected importances"),
        }
    } else {
        &table.psi
    };
    let stats: Vec<(f64, f64)> = rows.iter().map(|r| mean_sd(r)).collect();
    let p_raw: Vec<f64> = rows.iter().map(|r| t_test_one_sided(r)).collect::<Result<_>>()?;

    let (mode, p_h, p_tilde, selected, frontier) = if table.covers_all_nodes(tree) {
        let p_h = hierarchical_adjust(tree, &p_raw)?;
        let (p_tilde, selected, frontier) = bonferroni_select(tree, &p_h, alpha)?;
        (InferenceMode::Hierarchical, p_h, p_tilde, selected, frontier)
    } else {
        if table.node_ids.iter().any(|&id| !tree.is_leaf(id)) {
            return invalid("partial tables must contain leaves only");
        }
        let (p_tilde, selected) = bonferroni(&p_raw, tree.p() as f64, alpha)?;
        let frontier = table
            .node_ids
            .iter()
            .zip(&selected)
            .filter(|(_, &s)| s)
            .map(|(&id, _)| id)
            .collect();
        (InferenceMode::Flat, p_raw.clone(), p_tilde, selected, frontier)
    };

    let nodes = table
        .node_ids
        .iter()
        .enumerate()
        .map(|(r, &id)| {
            Ok(NodeInference {
                id,
                members: tree.traversal(id)?.to_vec(),
                psi_mean: stats[r].0,
                psi_sd: stats[r].1,
                p_raw: p_raw[r],
                p_h: p_h[r],
                p_tilde: p_tilde[r],
                selected: selected[r],
            })
        })
        .collect::<Result<_>>()?;
    Ok(InferenceResult {
        mode,
        conserved: use_corrected,
        alpha,
        correction: tree.p() as f64,
        nodes,
        frontier,
    })
}
