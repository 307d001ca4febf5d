//! Plot-ready dendrogram tables and text trees from analysis results.

use serde::Serialize;

use crate::cluster::NodeKind;
use crate::error::{Error, Result};
use crate::inference::InferenceResult;
use crate::report::AnalysisReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DendrogramRow {
    pub node_id: usize,
    pub parent: Option<usize>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub label: String,
    /// Horizontal position: leaf rank, or the mean of the children.
    pub x: f64,
    pub height: f64,
    pub size: usize,
    pub p_tilde: Option<f64>,
    pub selected: bool,
    pub frontier: bool,
}

/// Inference used for display: the conserved one when requested.
pub fn pick_inference(report: &AnalysisReport, conserved: bool) -> Result<&InferenceResult> {
    if conserved {
        report
            .conserved
            .as_ref()
            .ok_or_else(|| Error::Schema("results file: missing field `conserved`".into()))
    } else {
        Ok(&report.inference)
    }
}

fn label(report: &AnalysisReport, id: usize) -> String {
    let tree = &report.tree;
    match tree.nodes()[id].kind {
        NodeKind::Leaf { var } => report.names.get(var).cloned().unwrap_or_else(|| format!("x{var}")),
        NodeKind::Internal { .. } => format!("node{id}"),
    }
}

pub fn dendrogram_rows(report: &AnalysisReport, conserved: bool) -> Result<Vec<DendrogramRow>> {
    let result = pick_inference(report, conserved)?;
    let tree = &report.tree;
    let mut x = vec![0.0; tree.n_nodes()];
    for (rank, var) in tree.leaf_order().into_iter().enumerate() {
        x[var] = rank as f64;
    }
    for id in tree.p()..tree.n_nodes() {
        if let Some((l, r)) = tree.children(id) {
            x[id] = (x[l] + x[r]) / 2.0;
        }
    }
    Ok(tree
        .nodes()
        .iter()
        .map(|n| {
            let inf = result.node(n.id);
            let (left, right) = match tree.children(n.id) {
                Some((l, r)) => (Some(l), Some(r)),
                None => (None, None),
            };
            DendrogramRow {
                node_id: n.id,
                parent: tree.parent(n.id),
                left,
                right,
                label: label(report, n.id),
                x: x[n.id],
                height: n.height,
                size: n.members.len(),
                p_tilde: inf.map(|i| i.p_tilde),
                selected: inf.is_some_and(|i| i.selected),
                frontier: result.frontier.contains(&n.id),
            }
        })
        .collect())
}

pub fn dendrogram_csv(rows: &[DendrogramRow], comment: Option<&str>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    if let Some(c) = comment {
        for line in c.lines() {
            buf.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    let mut w = csv::Writer::from_writer(&mut buf);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Schema(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Schema(e.to_string()))?;
    drop(w);
    Ok(buf)
}

/// Indented tree, root first. Markers: `[F]` frontier, `[*]` selected,
/// `[ ]` not selected, `[.]` not tested.
pub fn text_tree(report: &AnalysisReport, conserved: bool) -> Result<String> {
    let result = pick_inference(report, conserved)?;
    let tree = &report.tree;
    let mut out = String::new();
    let mut stack = vec![(tree.root(), 0usize)];
    while let Some((id, depth)) = stack.pop() {
        let inf = result.node(id);
        let mark = match inf {
            Some(_) if result.frontier.contains(&id) => "[F]",
            Some(i) if i.selected => "[*]",
            Some(_) => "[ ]",
            None => "[.]",
        };
        let stats = inf.map_or(String::new(), |i| format!("  p~={:.4}  psi={:.4}", i.p_tilde, i.psi_mean));
        let size = tree.nodes()[id].members.len();
        out.push_str(&format!("{}{mark} {} (n={size}){stats}\n", "  ".repeat(depth), label(report, id)));
        if let Some((l, r)) = tree.children(id) {
            stack.push((r, depth + 1));
            stack.push((l, depth + 1));
        }
    }
    Ok(out)
}
