//! Top-down reallocation of importance so that children exactly share
//! their parent's importance.
//!
//! With indicators `a = 𝟙_L`, `b = 𝟙_R` (standardized fold mean at least
//! `ε`) and corrected parent value `P`:
//!
//! ```text
//! a = 1:  ψ̃_L = ψ_L + b (P - ψ_L - ψ_R) / 2
//! a = 0:  ψ̃_L = P ψ_L / (ψ_L + ψ_R) (1 - b) + b (P - ψ_R)
//! ```
//!
//! and the mirrored rule for the right child. The root is left unchanged.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cluster::DendrogramTree;
use crate::cpi::{mean_sd, ImportanceTable};
use crate::error::{invalid, Result};
use crate::inference::{infer, InferenceResult};

/// 95% standard normal quantile.
pub fn default_epsilon() -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.95)
}

pub const DEFAULT_RATIO_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConservationConfig {
    pub epsilon: f64,
    pub ratio_guard: f64,
}

impl Default for ConservationConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            ratio_guard: DEFAULT_RATIO_GUARD,
        }
    }
}

impl ConservationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.ratio_guard > 0.0) || !self.ratio_guard.is_finite() {
            return invalid(format!("ratio guard must be positive, got {}", self.ratio_guard));
        }
        Ok(())
    }
}

/// Whether a node transmits its own importance: `mean / sd ≥ ε`, or
/// `mean > 0` when `sd = 0`.
pub fn indicator(psi_mean: f64, psi_sd: f64, epsilon: f64) -> bool {
    if psi_sd == 0.0 {
        psi_mean > 0.0
    } else {
        psi_mean / psi_sd >= epsilon
    }
}

/// Which rule assigned a node's corrected value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Root,
    /// Both children transmit: own value plus half the residual.
    SharedResidual,
    /// Transmitting child next to a silent sibling: own value.
    Kept,
    /// Silent child next to a transmitting sibling: parent minus sibling.
    Remainder,
    /// Both children silent: proportional share.
    Proportional,
    /// Both children silent with a degenerate ratio.
    EqualSplit,
}

/// Children's corrected values for one fold.
fn allocate(parent: f64, l: f64, r: f64, il: bool, ir: bool, guard: f64) -> (f64, Branch, Branch) {
    match (il, ir) {
        (true, true) => {
            let cl = l + (parent - l - r) / 2.0;
            (cl, Branch::SharedResidual, Branch::SharedResidual)
        }
        (true, false) => (l, Branch::Kept, Branch::Remainder),
        (false, true) => (parent - r, Branch::Remainder, Branch::Kept),
        (false, false) => {
            let total = l + r;
            let ratio = l / total;
            if total <= guard || !(0.0..=1.0).contains(&ratio) {
                (parent / 2.0, Branch::EqualSplit, Branch::EqualSplit)
            } else {
                (parent * ratio.clamp(0.0, 1.0), Branch::Proportional, Branch::Proportional)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDiagnostic {
    pub id: usize,
    pub indicator: bool,
    /// Rule applied on each fold.
    pub branches: Vec<Branch>,
    pub psi_mean: f64,
    pub corrected_mean: f64,
    /// Where the verbal description ("a silent child stays unchanged")
    /// and the formula disagree: the raw mean the description would keep.
    pub unchanged_alternative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationDiagnostics {
    pub epsilon: f64,
    pub nodes: Vec<NodeDiagnostic>,
    /// Parent counts per `(𝟙_L, 𝟙_R)`, ordered `00, 01, 10, 11`.
    pub indicator_pairs: [usize; 4],
}

impl ConservationDiagnostics {
    /// Nodes whose corrected value came from the `Remainder` rule.
    pub fn tension_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.unchanged_alternative.is_some())
            .map(|n| n.id)
            .collect()
    }
}

/// Returns a copy of `table` with `psi_corrected` filled in.
pub fn conserve(
    tree: &DendrogramTree,
    table: &ImportanceTable,
    cfg: &ConservationConfig,
) -> Result<(ImportanceTable, ConservationDiagnostics)> {
    cfg.validate()?;
    if !table.covers_all_nodes(tree) {
        return invalid("conservation needs importances for every node of the tree");
    }
    let n_nodes = tree.n_nodes();
    let folds = table.folds;
    let ind: Vec<bool> = table
        .psi
        .iter()
        .map(|row| {
            let (m, s) = mean_sd(row);
            indicator(m, s, cfg.epsilon)
        })
        .collect();
    let mut corrected = table.psi.clone();
    let mut branches = vec![vec![Branch::Root; folds]; n_nodes];
    let mut pairs = [0usize; 4];
    // Parents have larger ids, so a descending sweep is top-down.
    for id in (0..n_nodes).rev() {
        let Some((l, r)) = tree.children(id) else { continue };
        let (il, ir) = (ind[l], ind[r]);
        pairs[(il as usize) * 2 + ir as usize] += 1;
        for k in 0..folds {
            let parent = corrected[id][k];
            let (cl, bl, br) = allocate(parent, table.psi[l][k], table.psi[r][k], il, ir, cfg.ratio_guard);
            corrected[l][k] = cl;
            corrected[r][k] = parent - cl;
            branches[l][k] = bl;
            branches[r][k] = br;
        }
    }
    let nodes = (0..n_nodes)
        .map(|id| {
            let psi_mean = mean_sd(&table.psi[id]).0;
            let remainder = branches[id].contains(&Branch::Remainder);
            NodeDiagnostic {
                id,
                indicator: ind[id],
                branches: branches[id].clone(),
                psi_mean,
                corrected_mean: mean_sd(&corrected[id]).0,
                unchanged_alternative: remainder.then_some(psi_mean),
            }
        })
        .collect();
    let mut out = table.clone();
    out.psi_corrected = Some(corrected);
    Ok((
        out,
        ConservationDiagnostics {
            epsilon: cfg.epsilon,
            nodes,
            indicator_pairs: pairs,
        },
    ))
}

/// Conserves `table` and runs the inference pipeline on the corrected
/// importances.
pub fn infer_with_conservation(
    tree: &DendrogramTree,
    table: &ImportanceTable,
    cfg: &ConservationConfig,
    alpha: f64,
) -> Result<(InferenceResult, ImportanceTable, ConservationDiagnostics)> {
    let (corrected, diag) = conserve(tree, table, cfg)?;
    let result = infer(tree, &corrected, alpha, true)?;
    Ok((result, corrected, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Merge;
    use crate::learners::{LearnerKind, LossKind};

    #[test]
    fn default_epsilon_value() {
        assert!((default_epsilon() - 1.6448536269514722).abs() < 1e-12);
    }

    #[test]
    fn indicator_examples() {
        assert!(indicator(2.0, 1.0, 1.645));
        assert!(!indicator(1.0, 1.0, 1.645));
        assert!(indicator(0.1, 0.0, 1.645));
        assert!(!indicator(0.0, 0.0, 1.645));
    }

    #[test]
    fn allocation_examples() {
        let (l, _, _) = allocate(10.0, 3.0, 3.0, true, true, 1e-12);
        assert_eq!((l, 10.0 - l), (5.0, 5.0));
        let (l, _, _) = allocate(10.0, 1.0, 3.0, false, false, 1e-12);
        assert_eq!((l, 10.0 - l), (2.5, 7.5));
        let (l, bl, br) = allocate(10.0, 3.0, 0.1, true, false, 1e-12);
        assert_eq!((l, 10.0 - l), (3.0, 7.0));
        assert_eq!((bl, br), (Branch::Kept, Branch::Remainder));
        let (l, bl, _) = allocate(10.0, 0.0, 0.0, false, false, 1e-12);
        assert_eq!((l, bl), (5.0, Branch::EqualSplit));
        let (l, bl, _) = allocate(10.0, -1.0, 3.0, false, false, 1e-12);
        assert_eq!((l, bl), (5.0, Branch::EqualSplit));
    }

    #[test]
    fn conserve_small_tree() {
        let tree = DendrogramTree::from_merges(3, &[Merge { a: 0, b: 1, height: 1.0 }, Merge { a: 2, b: 3, height: 2.0 }])
            .unwrap();
        let table = ImportanceTable {
            node_ids: (0..5).collect(),
            psi: vec![vec![1.0, 1.2], vec![0.1, -0.1], vec![0.5, 0.7], vec![0.4, 0.6], vec![3.0, 2.0]],
            psi_corrected: None,
            folds: 2,
            n_perm: 1,
            loss: LossKind::Rmse,
            learner: LearnerKind::Ridge,
        };
        let (out, diag) = conserve(&tree, &table, &ConservationConfig::default()).unwrap();
        let c = out.psi_corrected.unwrap();
        assert_eq!(c[4], table.psi[4]);
        for k in 0..2 {
            assert!((c[4][k] - c[2][k] - c[3][k]).abs() < 1e-12);
            assert!((c[3][k] - c[0][k] - c[1][k]).abs() < 1e-12);
        }
        assert!(diag.nodes[4].branches.iter().all(|b| *b == Branch::Root));
        assert!(conserve(&tree, &table, &ConservationConfig { epsilon: 0.0, ..Default::default() }).is_err());
    }
}
