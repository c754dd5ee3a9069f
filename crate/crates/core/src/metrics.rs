//! Tree similarities, semantic scores and the Rand index.
//!
//! Both tree similarities compare two classes through the leaves that hold
//! them. A learned hierarchy is turned into a [`ClassTree`] whose classes are
//! its leaf ids, so instances in the same leaf get similarity 1. Flat
//! clusterings have no tree: two instances score 1 in the same cluster and 0
//! otherwise.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::seed;
use crate::tree::Hierarchy;

/// A rooted tree whose leaves carry class names, one class per leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTree {
    /// Parent of every node; the single root has none.
    parents: Vec<Option<usize>>,
    /// Leaf node of every class.
    classes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMetric {
    #[default]
    ShortestPath,
    PathSharing,
}

/// Which nodes make up a class's branch for path sharing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchConvention {
    /// Root to the class leaf, both included.
    #[default]
    IncludeLeaf,
    /// Root to the parent of the class leaf.
    ParentOnly,
}

impl ClassTree {
    pub fn new(parents: Vec<Option<usize>>, classes: BTreeMap<String, usize>) -> Result<Self> {
        let tree = Self { parents, classes };
        tree.validate()?;
        Ok(tree)
    }

    /// A root with one leaf per distinct class name.
    pub fn flat<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let distinct: std::collections::BTreeSet<&str> = names.into_iter().collect();
        let mut parents = vec![None];
        let mut classes = BTreeMap::new();
        for name in distinct {
            classes.insert(name.to_string(), parents.len());
            parents.push(Some(0));
        }
        Self::new(parents, classes)
    }

    /// Leaves of `hierarchy` as classes, named by their node id.
    pub fn from_hierarchy(hierarchy: &Hierarchy) -> Result<Self> {
        let parents = hierarchy
            .nodes()
            .iter()
            .map(|n| n.parent.map(|p| p - 1))
            .collect();
        let classes = hierarchy
            .leaves()
            .into_iter()
            .map(|id| (id.to_string(), id - 1))
            .collect();
        Self::new(parents, classes)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::structural(format!("class tree has {roots} roots")));
        }
        let mut has_child = vec![false; n];
        for (v, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == v {
                    return Err(Error::structural(format!(
                        "node {v} has invalid parent {p}"
                    )));
                }
                has_child[p] = true;
            }
        }
        // Every node must reach the root within n steps.
        for v in 0..n {
            let mut cur = v;
            let mut steps = 0;
            while let Some(p) = self.parents[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::structural("class tree contains a cycle"));
                }
            }
        }
        let mut owner = vec![None; n];
        for (name, &leaf) in &self.classes {
            if leaf >= n || has_child[leaf] {
                return Err(Error::structural(format!("class {name} is not on a leaf")));
            }
            if let Some(other) = owner[leaf].replace(name) {
                return Err(Error::structural(format!(
                    "classes {other} and {name} share a leaf"
                )));
            }
        }
        if let Some(v) = (0..n).find(|&v| !has_child[v] && owner[v].is_none()) {
            return Err(Error::structural(format!("leaf {v} carries no class")));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    /// Class names in sorted order.
    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn leaf_of(&self, class: &str) -> Result<usize> {
        self.classes
            .get(class)
            .copied()
            .ok_or_else(|| Error::validation(format!("unknown class {class:?}")))
    }

    /// Nodes from the root down to `node`, both included.
    fn branch(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.parents[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    fn common_prefix(a: &[usize], b: &[usize]) -> usize {
        a.iter().zip(b).take_while(|(x, y)| x == y).count()
    }

    fn distance(a: &[usize], b: &[usize]) -> usize {
        let c = Self::common_prefix(a, b);
        (a.len() - c) + (b.len() - c)
    }

    /// Largest leaf-to-leaf distance over all class pairs.
    pub fn max_distance(&self) -> usize {
        let branches: Vec<Vec<usize>> = self.classes.values().map(|&l| self.branch(l)).collect();
        let mut best = 0;
        for i in 0..branches.len() {
            for j in i + 1..branches.len() {
                best = best.max(Self::distance(&branches[i], &branches[j]));
            }
        }
        best
    }

    /// Similarity of every class pair, rows and columns in sorted class order.
    pub fn similarity_matrix(
        &self,
        metric: TreeMetric,
        convention: BranchConvention,
    ) -> Array2<f64> {
        let branches: Vec<Vec<usize>> = self.classes.values().map(|&l| self.branch(l)).collect();
        let c = branches.len();
        let d_max = self.max_distance();
        let mut out = Array2::ones((c, c));
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    out[[i, j]] = match metric {
                        TreeMetric::ShortestPath => sp(&branches[i], &branches[j], d_max),
                        TreeMetric::PathSharing => ps(&branches[i], &branches[j], convention),
                    };
                }
            }
        }
        out
    }

    fn pair(&self, a: &str, b: &str) -> Result<(Vec<usize>, Vec<usize>)> {
        Ok((self.branch(self.leaf_of(a)?), self.branch(self.leaf_of(b)?)))
    }
}

fn sp(a: &[usize], b: &[usize], d_max: usize) -> f64 {
    if d_max == 0 {
        return 1.0;
    }
    1.0 - ClassTree::distance(a, b) as f64 / d_max as f64
}

fn ps(a: &[usize], b: &[usize], convention: BranchConvention) -> f64 {
    let (a, b) = match convention {
        BranchConvention::IncludeLeaf => (a, b),
        BranchConvention::ParentOnly => (&a[..a.len() - 1], &b[..b.len() - 1]),
    };
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    ClassTree::common_prefix(a, b) as f64 / longest as f64
}

/// `1 - d(a, b) / d_max`, with `d_max` the largest distance between any two
/// classes of `tree`.
pub fn shortest_path_similarity(tree: &ClassTree, a: &str, b: &str) -> Result<f64> {
    let (ba, bb) = tree.pair(a, b)?;
    Ok(sp(&ba, &bb, tree.max_distance()))
}

/// Shared branch prefix over the longer of the two branches.
pub fn path_sharing_similarity(
    tree: &ClassTree,
    a: &str,
    b: &str,
    convention: BranchConvention,
) -> Result<f64> {
    let (ba, bb) = tree.pair(a, b)?;
    Ok(ps(&ba, &bb, convention))
}

/// The clustering being scored.
#[derive(Debug, Clone, Copy)]
pub enum Learned<'a> {
    Hierarchy(&'a Hierarchy),
    /// Cluster of every instance, without a tree.
    Flat(&'a [usize]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub metric: TreeMetric,
    pub convention: BranchConvention,
    /// Number of uniformly sampled pairs; all pairs when `None`.
    pub pair_budget: Option<usize>,
    pub seed: u64,
}

impl ScoreOptions {
    pub fn new(metric: TreeMetric) -> Self {
        Self {
            metric,
            convention: BranchConvention::default(),
            pair_budget: None,
            seed: 0,
        }
    }
}

/// Per-instance class index into a similarity matrix.
struct Table {
    class_of: Vec<usize>,
    sim: Array2<f64>,
}

impl Table {
    fn get(&self, i: usize, j: usize) -> f64 {
        self.sim[[self.class_of[i], self.class_of[j]]]
    }
}

fn truth_table(truth: &ClassTree, dataset: &Dataset, opts: &ScoreOptions) -> Result<Table> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::validation("dataset has no ground-truth labels"))?;
    let index: HashMap<&str, usize> = truth.classes().enumerate().map(|(i, c)| (c, i)).collect();
    let class_of = labels
        .iter()
        .map(|l| {
            index
                .get(l.as_str())
                .copied()
                .ok_or_else(|| Error::validation(format!("label {l:?} is not a class of the tree")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        class_of,
        sim: truth.similarity_matrix(opts.metric, opts.convention),
    })
}

fn learned_table(learned: Learned<'_>, n: usize, opts: &ScoreOptions) -> Result<Table> {
    match learned {
        Learned::Hierarchy(h) => {
            let partition = h.leaf_partition()?;
            if partition.len() != n {
                return Err(Error::validation(format!(
                    "hierarchy covers {} instances, dataset has {n}",
                    partition.len()
                )));
            }
            let tree = ClassTree::from_hierarchy(h)?;
            let index: HashMap<String, usize> = tree
                .classes()
                .enumerate()
                .map(|(i, c)| (c.to_string(), i))
                .collect();
            let class_of = partition.iter().map(|id| index[&id.to_string()]).collect();
            Ok(Table {
                class_of,
                sim: tree.similarity_matrix(opts.metric, opts.convention),
            })
        }
        Learned::Flat(labels) => {
            if labels.len() != n {
                return Err(Error::validation(format!(
                    "flat clustering has {} labels, dataset has {n}",
                    labels.len()
                )));
            }
            let c = labels.iter().max().map_or(0, |m| m + 1);
            Ok(Table {
                class_of: labels.to_vec(),
                sim: Array2::eye(c),
            })
        }
    }
}

/// One minus the mean squared difference between learned and ground-truth
/// similarities over instance pairs.
pub fn semantic_score(
    learned: Learned<'_>,
    truth: &ClassTree,
    dataset: &Dataset,
    opts: &ScoreOptions,
) -> Result<f64> {
    let n = dataset.len();
    let t = truth_table(truth, dataset, opts)?;
    let l = learned_table(learned, n, opts)?;
    if n < 2 {
        return Ok(1.0);
    }
    let sq = |i: usize, j: usize| {
        let d = l.get(i, j) - t.get(i, j);
        d * d
    };
    let mse = match opts.pair_budget {
        None => {
            let rows = par::map_range(n, |i| (i + 1..n).map(|j| sq(i, j)).sum::<f64>());
            rows.iter().sum::<f64>() / (n * (n - 1) / 2) as f64
        }
        Some(0) => return Err(Error::config("pair budget must be positive")),
        Some(budget) => {
            let mut rng = seed::rng(opts.seed);
            let mut total = 0.0;
            for _ in 0..budget {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                total += sq(i, j);
            }
            total / budget as f64
        }
    };
    Ok(1.0 - mse)
}

/// Fraction of instance pairs on which the two partitions agree. Defined as 1
/// when there are fewer than two instances.
pub fn rand_index<A, B>(pred: &[A], truth: &[B]) -> Result<f64>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if pred.len() != truth.len() {
        return Err(Error::validation(format!(
            "partitions have {} and {} instances",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as u128;
    if n < 2 {
        return Ok(1.0);
    }
    let pairs = |c: u128| c * c.saturating_sub(1) / 2;
    let mut joint: HashMap<(&A, &B), u128> = HashMap::new();
    let mut rows: HashMap<&A, u128> = HashMap::new();
    let mut cols: HashMap<&B, u128> = HashMap::new();
    for (a, b) in pred.iter().zip(truth) {
        *joint.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let tp: u128 = joint.values().map(|&c| pairs(c)).sum();
    let same_pred: u128 = rows.values().map(|&c| pairs(c)).sum();
    let same_truth: u128 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    let tn = total + tp - same_pred - same_truth;
    Ok((tp + tn) as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced() -> ClassTree {
        // root=0, n1=1, n2=2, c1..c4 = 3..6
        let parents = vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)];
        let classes = [("c1", 3), ("c2", 4), ("c3", 5), ("c4", 6)]
            .into_iter()
            .map(|(c, l)| (c.to_string(), l))
            .collect();
        ClassTree::new(parents, classes).unwrap()
    }

    #[test]
    fn sp_examples() {
        let t = balanced();
        assert_eq!(shortest_path_similarity(&t, "c1", "c2").unwrap(), 0.5);
        assert_eq!(shortest_path_similarity(&t, "c1", "c3").unwrap(), 0.0);
        assert_eq!(shortest_path_similarity(&t, "c1", "c1").unwrap(), 1.0);
        assert!(shortest_path_similarity(&t, "c1", "c9").is_err());
    }

    #[test]
    fn ps_examples() {
        let t = balanced();
        let inc = BranchConvention::IncludeLeaf;
        assert_eq!(
            path_sharing_similarity(&t, "c1", "c2", inc).unwrap(),
            2.0 / 3.0
        );
        assert_eq!(
            path_sharing_similarity(&t, "c1", "c3", inc).unwrap(),
            1.0 / 3.0
        );
        assert_eq!(path_sharing_similarity(&t, "c1", "c1", inc).unwrap(), 1.0);
        let par = BranchConvention::ParentOnly;
        assert_eq!(path_sharing_similarity(&t, "c1", "c2", par).unwrap(), 1.0);
        assert_eq!(path_sharing_similarity(&t, "c1", "c3", par).unwrap(), 0.5);
    }

    #[test]
    fn rand_examples() {
        assert_eq!(rand_index(&[1, 2, 1, 2], &[1, 1, 2, 2]).unwrap(), 1.0 / 3.0);
        assert_eq!(rand_index(&[0, 1, 2], &[5, 5, 5]).unwrap(), 0.0);
        assert_eq!(rand_index(&["a", "b"], &[3, 4]).unwrap(), 1.0);
        assert!(rand_index(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn invalid_trees_rejected() {
        let one = |c: &str, l| [(c.to_string(), l)].into_iter().collect::<BTreeMap<_, _>>();
        assert!(ClassTree::new(vec![None, None], one("a", 0)).is_err());
        assert!(ClassTree::new(vec![None, Some(0)], one("a", 0)).is_err());
        assert!(ClassTree::new(vec![None, Some(0), Some(0)], one("a", 1)).is_err());
        assert!(ClassTree::new(vec![None], one("a", 0)).is_ok());
    }
}
