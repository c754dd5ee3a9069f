//! Hierarchy export as JSON or Graphviz dot.
//!
//! JSON output lists nodes in id order with a fixed field order, so equal
//! hierarchies serialize to identical bytes. It carries enough to rebuild the
//! hierarchy with [`hierarchy_from_json`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{ClusterModels, Hierarchy, NodeId, TreeNode};

pub const DEFAULT_TOP_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Json,
    Dot,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ExportFormat::Json),
            "dot" | "gv" => Ok(ExportFormat::Dot),
            other => Err(Error::config(format!("unknown export format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportOptions {
    /// Number of top features listed per node and per cluster.
    pub top_features: usize,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            top_features: DEFAULT_TOP_FEATURES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
    pub size: usize,
    /// Absent for leaves.
    pub split_score: Option<f64>,
    pub objective: Option<f64>,
    /// Features with the largest column norm over the node's models.
    pub top_features: Vec<usize>,
    /// Features with the largest absolute weight, per cluster model.
    pub cluster_top_features: Vec<Vec<usize>>,
    pub members: Vec<usize>,
    pub labels: Option<Vec<usize>>,
    pub weights: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedHierarchy {
    pub instances: usize,
    pub leaf_count: usize,
    pub nodes: Vec<ExportedNode>,
}

/// Indices of the `m` largest positive scores, ties to the lower index.
fn top_indices(scores: impl Iterator<Item = f64>, m: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, f64)> = scores.enumerate().filter(|&(_, s)| s > 0.0).collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.into_iter().take(m).map(|(i, _)| i).collect()
}

fn export_node(node: &TreeNode, opts: &ExportOptions) -> ExportedNode {
    let (top_features, cluster_top_features, weights) = match &node.models {
        Some(models) => {
            let w = models.weights();
            let norms = w.columns().into_iter().map(|c| c.dot(&c).sqrt());
            let per_cluster = w
                .rows()
                .into_iter()
                .map(|r| top_indices(r.iter().map(|v| v.abs()), opts.top_features))
                .collect();
            let rows = w.rows().into_iter().map(|r| r.to_vec()).collect();
            (
                top_indices(norms, opts.top_features),
                per_cluster,
                Some(rows),
            )
        }
        None => (Vec::new(), Vec::new(), None),
    };
    ExportedNode {
        id: node.id,
        parent: node.parent,
        children: node.children.clone(),
        depth: node.depth,
        size: node.members.len(),
        split_score: node.split_score.filter(|s| s.is_finite()),
        objective: node.objective,
        top_features,
        cluster_top_features,
        members: node.members.clone(),
        labels: node.labels.clone(),
        weights,
    }
}

pub fn export_document(hierarchy: &Hierarchy, opts: &ExportOptions) -> ExportedHierarchy {
    ExportedHierarchy {
        instances: hierarchy.root().members.len(),
        leaf_count: hierarchy.leaf_count(),
        nodes: hierarchy
            .nodes()
            .iter()
            .map(|n| export_node(n, opts))
            .collect(),
    }
}

pub fn hierarchy_to_json(hierarchy: &Hierarchy, opts: &ExportOptions) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&export_document(hierarchy, opts))?;
    s.push('\n');
    Ok(s)
}

/// Rebuilds a hierarchy from its JSON export.
pub fn hierarchy_from_json(text: &str) -> Result<Hierarchy> {
    let doc: ExportedHierarchy = serde_json::from_str(text)?;
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| {
            let models = match n.weights {
                Some(rows) => {
                    let k = rows.len();
                    let p = rows.first().map_or(0, Vec::len);
                    let flat: Vec<f64> = rows.into_iter().flatten().collect();
                    let w = Array2::from_shape_vec((k, p), flat).map_err(|_| {
                        Error::structural(format!("ragged weights at node {}", n.id))
                    })?;
                    Some(ClusterModels::new(w)?)
                }
                None => None,
            };
            Ok(TreeNode {
                id: n.id,
                parent: n.parent,
                children: n.children,
                members: n.members,
                models,
                labels: n.labels,
                split_score: n.split_score,
                objective: n.objective,
                depth: n.depth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Hierarchy::from_nodes(nodes)
}

pub fn hierarchy_to_dot(hierarchy: &Hierarchy) -> String {
    let mut out = String::from("digraph hierarchy {\n  node [shape=box];\n");
    for node in hierarchy.nodes() {
        let score = match node.split_score {
            Some(s) => format!("{s:.6e}"),
            None => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\\nsize={}\\nscore={}\"];",
            node.id,
            node.id,
            node.members.len(),
            score
        );
    }
    for node in hierarchy.nodes() {
        for c in &node.children {
            let _ = writeln!(out, "  n{} -> n{};", node.id, c);
        }
    }
    out.push_str("}\n");
    out
}

pub fn export_hierarchy(
    hierarchy: &Hierarchy,
    path: impl AsRef<Path>,
    format: ExportFormat,
    opts: &ExportOptions,
) -> Result<()> {
    let text = match format {
        ExportFormat::Json => hierarchy_to_json(hierarchy, opts)?,
        ExportFormat::Dot => hierarchy_to_dot(hierarchy),
    };
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::SplitRecord;
    use ndarray::array;

    fn binary() -> Hierarchy {
        let mut h = Hierarchy::new(8);
        let w = ClusterModels::new(array![[0.0, 2.0, 0.0], [0.0, -1.0, 0.0]]).unwrap();
        let rec = |labels: Vec<usize>, models| SplitRecord {
            k: 2,
            labels,
            models,
            score: 1.5,
            objective: Some(0.25),
        };
        h.split(1, rec(vec![0, 0, 0, 0, 1, 1, 1, 1], Some(w)))
            .unwrap();
        h.split(2, rec(vec![0, 1, 0, 1], None)).unwrap();
        h.split(3, rec(vec![1, 1, 0, 0], None)).unwrap();
        h
    }

    #[test]
    fn dot_counts() {
        let dot = hierarchy_to_dot(&binary());
        assert_eq!(dot.matches("[label=").count(), 7);
        assert_eq!(dot.matches(" -> ").count(), 6);
        let root = hierarchy_to_dot(&Hierarchy::new(3));
        assert_eq!(root.matches(" -> ").count(), 0);
    }

    #[test]
    fn json_round_trip() {
        let h = binary();
        let text = hierarchy_to_json(&h, &ExportOptions::default()).unwrap();
        let back = hierarchy_from_json(&text).unwrap();
        assert_eq!(back, h);
        assert_eq!(
            hierarchy_to_json(&back, &ExportOptions::default()).unwrap(),
            text
        );
    }

    #[test]
    fn single_column_top_feature() {
        let doc = export_document(&binary(), &ExportOptions::default());
        assert_eq!(doc.nodes[0].top_features, vec![1]);
        assert_eq!(doc.nodes[0].cluster_top_features, vec![vec![1], vec![1]]);
        assert!(doc.nodes[1].top_features.is_empty());
        let root_only = export_document(&Hierarchy::new(2), &ExportOptions::default());
        assert_eq!(root_only.nodes.len(), 1);
    }
}
