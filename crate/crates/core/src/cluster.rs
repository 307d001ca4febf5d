//! Ward agglomerative clustering of variables and dendrogram navigation.
//!
//! Columns are standardized and compared by squared Euclidean distance
//! (`2(n-1)(1-r)` for sample correlation `r`). Merges follow the
//! Lance–Williams recurrence for Ward linkage:
//!
//! ```text
//! d(k, i∪j) = ((n_i+n_k) d(k,i) + (n_j+n_k) d(k,j) - n_k d(i,j)) / (n_i+n_j+n_k)
//! ```
//!
//! Each step merges the closest active pair, ties broken by the smallest
//! `(min id, max id)`. Leaves carry ids `0..p`, internal nodes `p..2p-1` in
//! merge order, so a parent always has a larger id than its children.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::standardize;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf { var: usize },
    Internal { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    /// Merge distance; zero for leaves.
    pub height: f64,
    /// Sorted variable indices.
    pub members: Vec<usize>,
}

/// A merge of two existing node ids at a given height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Binary merge tree over `p` variables with `2p - 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DendrogramTree {
    p: usize,
    nodes: Vec<Node>,
    parent: Vec<Option<usize>>,
}

/// Set of nodes with pairwise disjoint member sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeCut {
    pub nodes: Vec<usize>,
}

impl DendrogramTree {
    /// Builds the tree from `p - 1` merges expressed over node ids.
    pub fn from_merges(p: usize, merges: &[Merge]) -> Result<Self> {
        if p < 2 {
            return invalid(format!("need at least 2 leaves, got {p}"));
        }
        if merges.len() != p - 1 {
            return invalid(format!("{} merges for {p} leaves", merges.len()));
        }
        let mut nodes: Vec<Node> = (0..p)
            .map(|j| Node {
                id: j,
                kind: NodeKind::Leaf { var: j },
                height: 0.0,
                members: vec![j],
            })
            .collect();
        let mut parent = vec![None; 2 * p - 1];
        for (t, m) in merges.iter().enumerate() {
            let id = p + t;
            let (left, right) = (m.a.min(m.b), m.a.max(m.b));
            if left == right || right >= id {
                return invalid(format!("merge {t} references invalid nodes ({}, {})", m.a, m.b));
            }
            for c in [left, right] {
                if parent[c].is_some() {
                    return invalid(format!("node {c} merged twice"));
                }
                parent[c] = Some(id);
            }
            let mut members = nodes[left].members.clone();
            members.extend_from_slice(&nodes[right].members);
            members.sort_unstable();
            nodes.push(Node {
                id,
                kind: NodeKind::Internal { left, right },
                height: m.height,
                members,
            });
        }
        Ok(Self { p, nodes, parent })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, id: usize) -> Result<&Node> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown node id {id}")))
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        id < self.p
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.nodes.get(id)?.kind {
            NodeKind::Internal { left, right } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent.get(id).copied().flatten()
    }

    /// Strict ancestors from the parent up to the root.
    pub fn ancestors(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.parent(id);
        while let Some(a) = cur {
            out.push(a);
            cur = self.parent(a);
        }
        out
    }

    /// Variables belonging to `id`, sorted.
    pub fn traversal(&self, id: usize) -> Result<&[usize]> {
        Ok(&self.node(id)?.members)
    }

    /// The `k` clusters present before the last `k - 1` merges.
    pub fn cut_at_count(&self, k: usize) -> Result<TreeCut> {
        if k == 0 || k > self.p {
            return invalid(format!("cut size must lie in [1, {}], got {k}", self.p));
        }
        // Undoing the last k-1 merges leaves exactly the nodes created before
        // them whose parent (if any) was created by one of them.
        let threshold = self.nodes.len() - (k - 1);
        let nodes = (0..threshold)
            .filter(|&id| self.parent(id).is_none_or(|par| par >= threshold))
            .collect();
        Ok(TreeCut { nodes })
    }

    /// Leaves in left-to-right dendrogram order.
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.p);
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            match self.nodes[id].kind {
                NodeKind::Leaf { var } => out.push(var),
                NodeKind::Internal { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn merges(&self) -> Vec<Merge> {
        self.nodes[self.p..]
            .iter()
            .map(|n| match n.kind {
                NodeKind::Internal { left, right } => Merge {
                    a: left,
                    b: right,
                    height: n.height,
                },
                NodeKind::Leaf { .. } => unreachable!("internal range holds only merges"),
            })
            .collect()
    }
}

impl TreeCut {
    /// Checks pairwise disjointness of member sets.
    pub fn is_valid(&self, tree: &DendrogramTree) -> bool {
        let mut seen = vec![false; tree.p()];
        for &id in &self.nodes {
            let Ok(node) = tree.node(id) else {
                return false;
            };
            for &j in &node.members {
                if seen[j] {
                    return false;
                }
                seen[j] = true;
            }
        }
        self.nodes.len() <= tree.p()
    }
}

/// JSON layout: leaves first (ids `0..p`), internal nodes in merge order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub p: usize,
    pub nodes: Vec<NodeJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: usize,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub height: Option<f64>,
    pub members: Vec<usize>,
}

impl From<&DendrogramTree> for TreeJson {
    fn from(tree: &DendrogramTree) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| {
                let (left, right, height) = match n.kind {
                    NodeKind::Leaf { .. } => (None, None, None),
                    NodeKind::Internal { left, right } => (Some(left), Some(right), Some(n.height)),
                };
                NodeJson {
                    id: n.id,
                    left,
                    right,
                    height,
                    members: n.members.clone(),
                }
            })
            .collect();
        TreeJson { p: tree.p, nodes }
    }
}

impl TryFrom<&TreeJson> for DendrogramTree {
    type Error = Error;

    fn try_from(json: &TreeJson) -> Result<Self> {
        let p = json.p;
        if json.nodes.len() != 2 * p.max(1) - 1 {
            return Err(Error::Schema(format!(
                "tree with p={p} must have {} nodes, found {}",
                2 * p.max(1) - 1,
                json.nodes.len()
            )));
        }
        let mut merges = Vec::with_capacity(p.saturating_sub(1));
        for (i, n) in json.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Schema(format!("node at position {i} has id {}", n.id)));
            }
            if i >= p {
                let field = |v: Option<usize>, name: &str| {
                    v.ok_or_else(|| Error::Schema(format!("internal node {i}: missing field `{name}`")))
                };
                merges.push(Merge {
                    a: field(n.left, "left")?,
                    b: field(n.right, "right")?,
                    height: n
                        .height
                        .ok_or_else(|| Error::Schema(format!("internal node {i}: missing field `height`")))?,
                });
            }
        }
        let tree = DendrogramTree::from_merges(p, &merges)?;
        for (a, b) in tree.nodes.iter().zip(&json.nodes) {
            if a.members != b.members {
                return Err(Error::Schema(format!("node {}: members inconsistent with children", a.id)));
            }
        }
        Ok(tree)
    }
}

impl Serialize for DendrogramTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TreeJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DendrogramTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let json = TreeJson::deserialize(d)?;
        DendrogramTree::try_from(&json).map_err(serde::de::Error::custom)
    }
}

/// Condensed symmetric matrix over up to `size` slots.
struct PairTable {
    size: usize,
    data: Vec<f64>,
}

impl PairTable {
    fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![f64::INFINITY; size * (size - 1) / 2],
        }
    }

    #[inline]
    fn index(&self, a: usize, b: usize) -> usize {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        // Row-major upper triangle without the diagonal.
        i * (2 * self.size - i - 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, a: usize, b: usize) -> f64 {
        self.data[self.index(a, b)]
    }

    #[inline]
    fn set(&mut self, a: usize, b: usize, v: f64) {
        let k = self.index(a, b);
        self.data[k] = v;
    }
}

/// Squared Euclidean distances between standardized columns of `x`.
pub fn column_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let z = standardize(x).data;
    let p = z.ncols();
    let gram = z.transpose() * &z;
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            0.0
        } else {
            (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0)
        }
    })
}

/// Ward linkage merges from a full `p × p` squared-distance matrix.
///
/// Keeps, for each active node, its nearest active neighbor among nodes with
/// a larger id. Ward distances never drop below the smaller of the two merged
/// distances, so only rows whose cached neighbor was consumed need a rescan.
pub fn ward_merges(dist: &DMatrix<f64>) -> Result<Vec<Merge>> {
    let p = dist.nrows();
    if p < 2 || dist.ncols() != p {
        return invalid(format!("distance matrix must be square with p >= 2, got {:?}", dist.shape()));
    }
    let total = 2 * p - 1;
    let mut d = PairTable::new(total);
    for i in 0..p {
        for j in (i + 1)..p {
            d.set(i, j, dist[(i, j)]);
        }
    }
    let mut size = vec![0usize; total];
    size[..p].iter_mut().for_each(|s| *s = 1);
    let mut active: Vec<bool> = (0..total).map(|i| i < p).collect();
    let mut nn = vec![usize::MAX; total];
    let mut nn_dist = vec![f64::INFINITY; total];

    let rescan = |a: usize, active: &[bool], d: &PairTable, upto: usize| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for b in (a + 1)..upto {
            if active[b] {
                let v = d.get(a, b);
                if v < best.1 {
                    best = (b, v);
                }
            }
        }
        best
    };

    for a in 0..p {
        let (b, v) = rescan(a, &active, &d, p);
        nn[a] = b;
        nn_dist[a] = v;
    }

    let mut merges = Vec::with_capacity(p - 1);
    for step in 0..(p - 1) {
        let new_id = p + step;
        // Global minimum over cached neighbors; (dist, a, nn[a]) ordering gives
        // the lexicographic tie-break because nn[a] > a.
        let mut best_a = usize::MAX;
        let mut best_v = f64::INFINITY;
        for a in 0..new_id {
            if active[a] && nn[a] != usize::MAX && nn_dist[a] < best_v {
                best_v = nn_dist[a];
                best_a = a;
            }
        }
        if best_a == usize::MAX {
            return invalid("distance matrix contains non-finite entries");
        }
        let (i, j) = (best_a, nn[best_a]);
        let dij = d.get(i, j);
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        active[i] = false;
        active[j] = false;
        for k in 0..new_id {
            if !active[k] {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((ni + nk) * d.get(k, i) + (nj + nk) * d.get(k, j) - nk * dij) / (ni + nj + nk);
            d.set(k, new_id, v);
        }
        size[new_id] = size[i] + size[j];
        active[new_id] = true;
        merges.push(Merge {
            a: i,
            b: j,
            height: dij,
        });
        for k in 0..new_id {
            if !active[k] {
                continue;
            }
            if nn[k] == i || nn[k] == j {
                let (b, v) = rescan(k, &active, &d, new_id + 1);
                nn[k] = b;
                nn_dist[k] = v;
            } else {
                let v = d.get(k, new_id);
                if v < nn_dist[k] {
                    nn[k] = new_id;
                    nn_dist[k] = v;
                }
            }
        }
        nn[new_id] = usize::MAX;
        nn_dist[new_id] = f64::INFINITY;
    }
    Ok(merges)
}

/// Ward clustering of the columns of `x`.
pub fn ward_cluster(x: &DMatrix<f64>) -> Result<DendrogramTree> {
    let p = x.ncols();
    if p < 2 {
        return invalid(format!("clustering needs at least 2 variables, got {p}"));
    }
    let dist = column_distances(x);
    let merges = ward_merges(&dist)?;
    DendrogramTree::from_merges(p, &merges)
}
