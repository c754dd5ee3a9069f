//! Splitting a single node by alternating descent.
//!
//! Labels start from a balanced k-means assignment. The loop then alternates
//! a weight update for fixed labels with a balanced reassignment for fixed
//! weights. Neither half-step can increase the split objective: the weight
//! update is warm-started and monotone, and a reassignment is only taken
//! when it strictly lowers the hinge cost.

use ndarray::Array2;

use crate::baselines::{kmeans, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::data::NodeData;
use crate::error::{Error, Result};
use crate::flow::{fitting_scale, solve_balanced_assignment, DEFAULT_COST_SCALE};
use crate::objective::{
    costs_from_scores, exclusive_penalty, exclusive_weights, group_penalty, node_objective,
    RegularizerConfig,
};
use crate::optim::{solve_w, SolverConfig};
use crate::tree::{AncestorChain, ClusterModels};

pub const DEFAULT_MAX_ALTERNATIONS: usize = 50;

/// Relative objective change below which alternation stops.
const ALTERNATION_TOL: f64 = 1e-6;

/// Cluster size bounds `[lower, upper]` of one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceBounds {
    pub lower: usize,
    pub upper: usize,
}

impl BalanceBounds {
    pub fn contains(&self, size: usize) -> bool {
        (self.lower..=self.upper).contains(&size)
    }
}

/// `lower = floor(0.9 n / k)`, `upper = ceil(1.1 n / k)`, widened if needed so
/// that `k * lower <= n <= k * upper`.
pub fn balance_bounds(n: usize, k: usize) -> Result<BalanceBounds> {
    if k < 2 {
        return Err(Error::config(format!(
            "branching factor must be at least 2, got {k}"
        )));
    }
    if n < k {
        return Err(Error::Unsplittable { size: n, k });
    }
    // Integer arithmetic keeps the 0.9 / 1.1 factors exact.
    let mut lower = (9 * n) / (10 * k);
    let mut upper = (11 * n).div_ceil(10 * k);
    if k * lower > n {
        lower = n / k;
    }
    if k * upper < n {
        upper = n.div_ceil(k);
    }
    Ok(BalanceBounds { lower, upper })
}

/// Seeded k-means followed by a balanced reassignment on squared distances
/// to the k-means centroids.
pub fn init_assignment(
    data: &NodeData<'_>,
    k: usize,
    bounds: BalanceBounds,
    seed: u64,
) -> Result<Vec<usize>> {
    let km = kmeans(data, k, seed, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let n = data.len();
    let mut costs = Array2::zeros((n, k));
    for i in 0..n {
        let row = data.row(i);
        for c in 0..k {
            costs[[i, c]] = row
                .iter()
                .zip(km.centroids.row(c).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
        }
    }
    let scale = fitting_scale(costs.view(), DEFAULT_COST_SCALE);
    Ok(solve_balanced_assignment(costs.view(), bounds.lower, bounds.upper, scale)?.labels)
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub models: ClusterModels,
    pub labels: Vec<usize>,
    pub objective: f64,
    pub score: f64,
    /// Completed reassignment rounds.
    pub iterations: usize,
    /// Split objective after initialization and after every half-step.
    pub history: Vec<f64>,
    pub bounds: BalanceBounds,
}

/// Fits `k` cluster models and a balanced labeling for one node.
pub fn split_node(
    data: &NodeData<'_>,
    chain: &AncestorChain,
    k: usize,
    reg: &RegularizerConfig,
    cfg: &SolverConfig,
    seed: u64,
    max_alternations: usize,
) -> Result<SplitResult> {
    let bounds = balance_bounds(data.len(), k)?;
    let mut labels = init_assignment(data, k, bounds, seed)?;
    let x = data.to_matrix();
    let n = data.len();

    let sol = solve_w(
        data,
        &labels,
        chain,
        reg,
        cfg,
        &ClusterModels::zeros(k, data.dim()),
    )?;
    let mut models = sol.models;
    let mut objective = sol.objective;
    let mut history = vec![objective];
    let mut iterations = 0;

    for _ in 0..max_alternations {
        let costs = costs_from_scores(x.dot(&models.weights().t()).view());
        let current: f64 = labels.iter().enumerate().map(|(i, &y)| costs[[i, y]]).sum();
        let scale = fitting_scale(costs.view(), DEFAULT_COST_SCALE);
        let next = solve_balanced_assignment(costs.view(), bounds.lower, bounds.upper, scale)?;
        if next.labels == labels || next.cost >= current {
            break;
        }
        iterations += 1;
        labels = next.labels;
        let after_assign = node_objective(&models, &labels, chain, data, reg)?;
        ensure_descent(objective, after_assign, "assignment")?;
        history.push(after_assign);

        let sol = solve_w(data, &labels, chain, reg, cfg, &models)?;
        ensure_descent(after_assign, sol.objective, "weight update")?;
        history.push(sol.objective);
        let rel = (objective - sol.objective) / objective.abs().max(f64::MIN_POSITIVE);
        models = sol.models;
        objective = sol.objective;
        if rel < ALTERNATION_TOL {
            break;
        }
    }
    log::debug!("split_node n={n} k={k} rounds={iterations} objective={objective:.6e}");

    let score = splitting_score(&models, &labels, data, chain)?;
    Ok(SplitResult {
        models,
        labels,
        objective,
        score,
        iterations,
        history,
        bounds,
    })
}

fn ensure_descent(before: f64, after: f64, step: &str) -> Result<()> {
    if !after.is_finite() || after > before + 1e-12 * before.abs().max(1.0) {
        return Err(Error::Solver(format!(
            "{step} raised the split objective from {before:e} to {after:e}"
        )));
    }
    Ok(())
}

/// Fit of members to their own cluster models over model complexity:
/// `sum_i w_{y_i} . x_i / (G(w) + E(w))`. Returns negative infinity when the
/// denominator vanishes, so such a split is never preferred.
pub fn splitting_score(
    models: &ClusterModels,
    labels: &[usize],
    data: &NodeData<'_>,
    chain: &AncestorChain,
) -> Result<f64> {
    if labels.len() != data.len() || models.dim() != data.dim() {
        return Err(Error::validation("labels or models do not match the node"));
    }
    let lambda = exclusive_weights(chain, models.k(), models.dim())?;
    let w = models.weights();
    let denominator = group_penalty(w) + exclusive_penalty(w, &lambda);
    if denominator == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let numerator: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| models.row(y).dot(&data.row(i)))
        .sum();
    Ok(numerator / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::objective::Variant;
    use ndarray::array;

    #[test]
    fn bounds_examples() {
        assert_eq!(
            balance_bounds(100, 2).unwrap(),
            BalanceBounds {
                lower: 45,
                upper: 55
            }
        );
        assert_eq!(
            balance_bounds(3, 2).unwrap(),
            BalanceBounds { lower: 1, upper: 2 }
        );
        assert_eq!(
            balance_bounds(2, 2).unwrap(),
            BalanceBounds { lower: 0, upper: 2 }
        );
        assert!(matches!(
            balance_bounds(1, 2),
            Err(Error::Unsplittable { .. })
        ));
        assert!(balance_bounds(5, 1).is_err());
    }

    #[test]
    fn bounds_always_feasible() {
        for k in 2..7 {
            for n in k..200 {
                let b = balance_bounds(n, k).unwrap();
                assert!(k * b.lower <= n && n <= k * b.upper, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn score_hand_value() {
        let ds = Dataset::new(array![[2.0, 0.0], [0.0, 2.0]], None).unwrap();
        let w = ClusterModels::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let s = splitting_score(&w, &[0, 1], &ds.all(), &AncestorChain::empty()).unwrap();
        assert_eq!(s, 8.0);
        let zero = ClusterModels::zeros(2, 2);
        let s = splitting_score(&zero, &[0, 1], &ds.all(), &AncestorChain::empty()).unwrap();
        assert_eq!(s, f64::NEG_INFINITY);
        let scaled = ClusterModels::new(w.weights() * 3.0).unwrap();
        let s3 = splitting_score(&scaled, &[0, 1], &ds.all(), &AncestorChain::empty()).unwrap();
        assert!((s3 - 8.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_respect_bounds() {
        let ds = Dataset::new(Array2::from_elem((20, 3), 1.5), None).unwrap();
        let bounds = BalanceBounds {
            lower: 9,
            upper: 11,
        };
        let a = init_assignment(&ds.all(), 2, bounds, 4).unwrap();
        let ones = a.iter().filter(|&&l| l == 1).count();
        assert!(bounds.contains(ones) && bounds.contains(20 - ones));
        assert_eq!(a, init_assignment(&ds.all(), 2, bounds, 4).unwrap());
    }

    #[test]
    fn zero_alternations_uses_init() {
        let ds = Dataset::new(
            array![[1.0, 0.0], [1.2, 0.1], [-1.0, 0.0], [-1.1, -0.1]],
            None,
        )
        .unwrap();
        let reg = RegularizerConfig::new(1e-3, 1e-3, Variant::SparseGroup).unwrap();
        let bounds = balance_bounds(4, 2).unwrap();
        let init = init_assignment(&ds.all(), 2, bounds, 9).unwrap();
        let r = split_node(
            &ds.all(),
            &AncestorChain::empty(),
            2,
            &reg,
            &SolverConfig::default(),
            9,
            0,
        )
        .unwrap();
        assert_eq!(r.labels, init);
        assert_eq!(r.iterations, 0);
        assert!(r.objective.is_finite());
    }
}
