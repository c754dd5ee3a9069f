//! k-means and the hierarchical k-means baselines.
//!
//! HKM and HKM-D reuse the greedy builder of [`crate::hier`]; only the
//! splitter and the splitting score differ. HKM grows the leaf whose k-means
//! split is most compact, HKM-D the leaf whose data is most scattered.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NodeData};
use crate::error::{Error, Result};
use crate::hier::{build_with, BuildConfig, BuildOutcome, Candidate, Splitter};
use crate::par;
use crate::seed;
use crate::tree::{Hierarchy, NodeId};

pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for each row, ties to the lowest index, with its squared distance.
fn assign(x: &Array2<f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    par::map_range(x.nrows(), |i| {
        let row = x.row(i);
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(row, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    })
}

fn seed_centroids(x: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Guard against rounding leaving the target past the last positive weight.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centroids
}

fn means(x: &Array2<f64>, labels: &[usize], k: usize, fallback: &Array2<f64>) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        sums.row_mut(l).scaled_add(1.0, &row);
        counts[l] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(c).mapv_inplace(|v| v / count as f64);
        } else {
            sums.row_mut(c).assign(&fallback.row(c));
        }
    }
    sums
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Empty clusters are refilled with the point farthest from its centroid
/// (lowest index on ties) taken from a cluster that keeps at least one member.
pub fn kmeans(
    data: &NodeData<'_>,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansResult> {
    let n = data.len();
    if k == 0 || n < k {
        return Err(Error::validation(format!(
            "k-means needs at least k = {k} instances, got {n}"
        )));
    }
    let x = data.to_matrix();
    let mut rng = seed::rng(seed);
    let mut centroids = seed_centroids(&x, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;

    for iter in 0..max_iters.max(1) {
        let assigned = assign(&x, &centroids);
        let mut new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut dists: Vec<f64> = assigned.iter().map(|a| a.1).collect();

        // Refill empty clusters before measuring inertia.
        let mut counts = vec![0usize; k];
        for &l in &new_labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[new_labels[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                })
                .expect("n >= k guarantees a cluster with two members");
            counts[new_labels[donor]] -= 1;
            counts[c] += 1;
            new_labels[donor] = c;
            dists[donor] = 0.0;
            centroids.row_mut(c).assign(&x.row(donor));
        }

        let inertia: f64 = dists.iter().sum();
        let unchanged = new_labels == labels;
        let prev = history.last().copied();
        history.push(inertia);
        labels = new_labels;
        iterations = iter + 1;
        if unchanged {
            break;
        }
        centroids = means(&x, &labels, k, &centroids);
        if let Some(prev) = prev {
            if prev - inertia <= tol * prev {
                break;
            }
        }
    }

    let centroids = means(&x, &labels, k, &centroids);
    let inertia = x
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(row, &l)| sq_dist(row, centroids.row(l)))
        .sum();
    Ok(KMeansResult {
        centroids,
        labels,
        inertia,
        iterations,
        history,
    })
}

/// How HKM measures the compactness of a candidate split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WithinDistance {
    /// Mean distance of each member to its cluster centroid.
    #[default]
    ToCentroid,
    /// Mean distance over all within-cluster pairs.
    Pairwise,
}

/// Negated average within-cluster distance; larger means more compact.
pub fn hkm_split_score(result: &KMeansResult, data: &NodeData<'_>, mode: WithinDistance) -> f64 {
    let n = data.len();
    match mode {
        WithinDistance::ToCentroid => {
            let total: f64 = (0..n)
                .map(|i| sq_dist(data.row(i), result.centroids.row(result.labels[i])).sqrt())
                .sum();
            -total / n as f64
        }
        WithinDistance::Pairwise => {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..n {
                for j in i + 1..n {
                    if result.labels[i] == result.labels[j] {
                        total += sq_dist(data.row(i), data.row(j)).sqrt();
                        pairs += 1;
                    }
                }
            }
            if pairs == 0 {
                0.0
            } else {
                -total / pairs as f64
            }
        }
    }
}

/// Total Euclidean distance of the node's members to their mean.
pub fn hkm_d_split_score(data: &NodeData<'_>) -> f64 {
    let x = data.to_matrix();
    let mean: Array1<f64> = x.mean_axis(Axis(0)).expect("node is non-empty");
    x.rows()
        .into_iter()
        .map(|r| sq_dist(r, mean.view()).sqrt())
        .sum()
}

/// Leaf growth rule for the k-means baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMeansScore {
    /// HKM: most compact candidate split.
    Compact(WithinDistance),
    /// HKM-D: most scattered leaf.
    Scattered,
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansSplitter {
    pub score: KMeansScore,
    pub max_iters: usize,
    pub tol: f64,
}

impl KMeansSplitter {
    pub fn new(score: KMeansScore) -> Self {
        Self {
            score,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

impl Splitter for KMeansSplitter {
    fn propose(
        &self,
        dataset: &Dataset,
        hierarchy: &Hierarchy,
        node: NodeId,
        k: usize,
        seed: u64,
    ) -> Result<Option<Candidate>> {
        let members = hierarchy.node(node)?.members.clone();
        if members.len() < k {
            return Ok(None);
        }
        let data = dataset.subset(members)?;
        let result = kmeans(&data, k, seed, self.max_iters, self.tol)?;
        let score = match self.score {
            KMeansScore::Compact(mode) => hkm_split_score(&result, &data, mode),
            KMeansScore::Scattered => hkm_d_split_score(&data),
        };
        Ok(Some(Candidate {
            labels: result.labels,
            score,
            models: None,
            objective: Some(result.inertia),
        }))
    }
}

/// Hierarchical k-means: grow the leaf with the most compact split.
pub fn build_hkm(dataset: &Dataset, config: &BuildConfig) -> Result<BuildOutcome> {
    build_with(
        dataset,
        config.k,
        config.stop,
        config.seed,
        &KMeansSplitter::new(KMeansScore::Compact(WithinDistance::ToCentroid)),
    )
}

/// Hierarchical k-means growing the leaf with the most scattered data.
pub fn build_hkm_d(dataset: &Dataset, config: &BuildConfig) -> Result<BuildOutcome> {
    build_with(
        dataset,
        config.k,
        config.stop,
        config.seed,
        &KMeansSplitter::new(KMeansScore::Scattered),
    )
}

/// Sum over leaves of squared distances to the leaf mean.
pub fn leaf_inertia(hierarchy: &Hierarchy, dataset: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for id in hierarchy.leaves() {
        let node = hierarchy.node(id)?;
        if node.is_empty() {
            continue;
        }
        let x = dataset.subset(node.members.clone())?.to_matrix();
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        total += x
            .rows()
            .into_iter()
            .map(|r| sq_dist(r, mean.view()))
            .sum::<f64>();
    }
    Ok(total)
}
