//! Cluster hierarchies and the ancestor chains used by the exclusive penalty.
//!
//! Node ids are assigned in creation order starting at 1 for the root.
//! Cluster labels are 0-based throughout the crate.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// The `K x P` weight matrix of one node split; row `k` scores cluster `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModels {
    weights: Array2<f64>,
}

impl ClusterModels {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() < 2 {
            return Err(Error::validation(format!(
                "a split needs at least 2 cluster models, got {}",
                weights.nrows()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite model weight"));
        }
        Ok(Self { weights })
    }

    pub fn zeros(k: usize, p: usize) -> Self {
        Self {
            weights: Array2::zeros((k, p)),
        }
    }

    /// Wraps a matrix without validation; used by the optimizer on its own iterates.
    pub(crate) fn from_raw(weights: Array2<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn into_weights(self) -> Array2<f64> {
        self.weights
    }

    pub fn k(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.weights.row(k)
    }

    /// Fraction of exactly-zero weights.
    pub fn sparsity(&self) -> f64 {
        let zeros = self.weights.iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / self.weights.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Dataset row positions owned by this node.
    pub members: Vec<usize>,
    /// Fitted split models; `None` for leaves and for splitters without models.
    pub models: Option<ClusterModels>,
    /// Per-member cluster label, aligned with `members`, once split.
    pub labels: Option<Vec<usize>>,
    pub split_score: Option<f64>,
    /// Objective value of the chosen split, when the splitter defines one.
    pub objective: Option<f64>,
    pub depth: usize,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Everything recorded when a node is finalized as a split.
#[derive(Debug, Clone)]
pub struct SplitRecord {
    pub k: usize,
    pub labels: Vec<usize>,
    pub models: Option<ClusterModels>,
    pub score: f64,
    pub objective: Option<f64>,
}

/// A rooted cluster tree. `nodes[id - 1]` holds node `id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    nodes: Vec<TreeNode>,
}

impl Hierarchy {
    /// A root-only hierarchy owning rows `0..n`.
    pub fn new(n: usize) -> Self {
        Self {
            nodes: vec![TreeNode {
                id: 1,
                parent: None,
                children: Vec::new(),
                members: (0..n).collect(),
                models: None,
                labels: None,
                split_score: None,
                objective: None,
                depth: 0,
            }],
        }
    }

    /// Assembles a hierarchy from raw nodes and checks every structural invariant.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        let h = Self { nodes };
        h.validate()?;
        Ok(h)
    }

    pub fn root_id(&self) -> NodeId {
        1
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode> {
        id.checked_sub(1)
            .and_then(|i| self.nodes.get(i))
            .ok_or_else(|| Error::structural(format!("unknown node id {id}")))
    }

    /// Leaf ids in increasing id order.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.id)
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Number of splits performed.
    pub fn split_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    /// Maximum node depth; 0 for a root-only tree.
    pub fn height(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Turns leaf `id` into an internal node with one child per cluster.
    /// Children get consecutive fresh ids in cluster order.
    pub fn split(&mut self, id: NodeId, record: SplitRecord) -> Result<Vec<NodeId>> {
        let node = self.node(id)?;
        if !node.is_leaf() {
            return Err(Error::structural(format!("node {id} is already split")));
        }
        if record.labels.len() != node.members.len() {
            return Err(Error::structural(format!(
                "{} labels for {} members of node {id}",
                record.labels.len(),
                node.members.len()
            )));
        }
        if record.k < 2 || record.labels.iter().any(|&l| l >= record.k) {
            return Err(Error::structural(format!(
                "invalid labels for a {}-way split",
                record.k
            )));
        }
        if let Some(m) = &record.models {
            if m.k() != record.k {
                return Err(Error::structural(
                    "model count differs from branching factor",
                ));
            }
        }
        let mut groups = vec![Vec::new(); record.k];
        for (&row, &label) in node.members.iter().zip(&record.labels) {
            groups[label].push(row);
        }
        let depth = node.depth + 1;
        let first = self.nodes.len() + 1;
        let child_ids: Vec<NodeId> = (first..first + record.k).collect();
        for (members, &cid) in groups.into_iter().zip(&child_ids) {
            self.nodes.push(TreeNode {
                id: cid,
                parent: Some(id),
                children: Vec::new(),
                members,
                models: None,
                labels: None,
                split_score: None,
                objective: None,
                depth,
            });
        }
        let node = &mut self.nodes[id - 1];
        node.children = child_ids.clone();
        node.models = record.models;
        node.labels = Some(record.labels);
        node.split_score = Some(record.score);
        node.objective = record.objective;
        Ok(child_ids)
    }

    /// Models and chosen child of every ancestor of `id`, root first.
    pub fn ancestor_chain(&self, id: NodeId) -> Result<AncestorChain> {
        let mut links = Vec::new();
        let mut child = self.node(id)?;
        while let Some(pid) = child.parent {
            let parent = self.node(pid)?;
            let models = parent.models.clone().ok_or_else(|| {
                Error::structural(format!("ancestor {pid} of node {id} has no fitted models"))
            })?;
            let position = parent
                .children
                .iter()
                .position(|&c| c == child.id)
                .ok_or_else(|| {
                    Error::structural(format!("node {} not linked from {pid}", child.id))
                })?;
            links.push(AncestorLink {
                models,
                chosen_child: position,
            });
            child = parent;
        }
        links.reverse();
        Ok(AncestorChain { links })
    }

    /// Leaf id owning each dataset row, indexed by row position.
    pub fn leaf_partition(&self) -> Result<Vec<NodeId>> {
        let n = self.root().members.len();
        let mut out = vec![0; n];
        for leaf in self.nodes.iter().filter(|n| n.is_leaf()) {
            for &row in &leaf.members {
                if row >= n || out[row] != 0 {
                    return Err(Error::structural(format!(
                        "row {row} in more than one leaf"
                    )));
                }
                out[row] = leaf.id;
            }
        }
        if let Some(row) = out.iter().position(|&l| l == 0) {
            return Err(Error::structural(format!("row {row} is in no leaf")));
        }
        Ok(out)
    }

    /// Checks ids, parent links, depths and that children partition their parent.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::structural("empty hierarchy"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i + 1 {
                return Err(Error::structural(format!(
                    "node at slot {i} has id {}",
                    node.id
                )));
            }
            match node.parent {
                None if node.id != 1 => {
                    return Err(Error::structural(format!("node {} has no parent", node.id)))
                }
                Some(_) if node.id == 1 => return Err(Error::structural("root has a parent")),
                Some(p) => {
                    let parent = self.node(p)?;
                    if p >= node.id {
                        return Err(Error::structural(format!(
                            "node {} created before its parent {p}",
                            node.id
                        )));
                    }
                    if !parent.children.contains(&node.id) {
                        return Err(Error::structural(format!(
                            "node {} not linked from {p}",
                            node.id
                        )));
                    }
                    if node.depth != parent.depth + 1 {
                        return Err(Error::structural(format!(
                            "node {} has wrong depth",
                            node.id
                        )));
                    }
                }
                None => {
                    if node.depth != 0 {
                        return Err(Error::structural("root depth must be 0"));
                    }
                }
            }
            if node.is_leaf() {
                continue;
            }
            let mut union: Vec<usize> = Vec::with_capacity(node.members.len());
            for &c in &node.children {
                let child = self.node(c)?;
                if child.parent != Some(node.id) {
                    return Err(Error::structural(format!(
                        "child {c} does not point back to {}",
                        node.id
                    )));
                }
                union.extend_from_slice(&child.members);
            }
            union.sort_unstable();
            let mut own = node.members.clone();
            own.sort_unstable();
            if union != own {
                return Err(Error::structural(format!(
                    "children of node {} do not partition its members",
                    node.id
                )));
            }
            if let Some(labels) = &node.labels {
                for (k, &c) in node.children.iter().enumerate() {
                    let expected: Vec<usize> = node
                        .members
                        .iter()
                        .zip(labels)
                        .filter(|(_, &l)| l == k)
                        .map(|(&r, _)| r)
                        .collect();
                    if expected != self.node(c)?.members {
                        return Err(Error::structural(format!(
                            "labels of node {} disagree with child {c}",
                            node.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One ancestor on the root-to-node path.
#[derive(Debug, Clone, PartialEq)]
pub struct AncestorLink {
    pub models: ClusterModels,
    /// Index of the child of this ancestor that lies on the path.
    pub chosen_child: usize,
}

/// Ancestor models from the root down to the node's parent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AncestorChain {
    pub links: Vec<AncestorLink>,
}

impl AncestorChain {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// The weight vectors `w_{a, k_a}` of the ancestral clusters, root first.
    pub fn path_models(&self) -> impl Iterator<Item = ArrayView1<'_, f64>> {
        self.links.iter().map(|l| l.models.row(l.chosen_child))
    }
}
