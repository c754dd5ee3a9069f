//! Loss and regularizer terms of the per-node split objective.
//!
//! For a node with `n` members, `K` clusters and `P` features:
//!
//! * hinge loss `H = 1/(nK) * sum_i sum_{y != y_i} [1 - w_{y_i}.x_i + w_y.x_i]_+^2`
//! * group penalty `G = 1/(PK) * sum_p ||w_{:,p}||_2`
//! * exclusive penalty `E = 1/(K|A|P) * sum_k sum_a sum_p |w_{k,p}| |w_{a k_a, p}|`
//!
//! With the ancestors frozen, `E` is a weighted l1 norm whose per-feature
//! weights are [`exclusive_weights`]. At the root there are no ancestors and
//! `E` is defined as zero.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::NodeData;
use crate::error::{Error, Result};
use crate::tree::{AncestorChain, ClusterModels};

/// Which penalty replaces `alpha * G + beta * E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `alpha * G + beta * E`.
    #[default]
    SparseGroup,
    /// `alpha * G`.
    GroupOnly,
    /// `beta * E`.
    ExclusiveOnly,
    /// `alpha * sum |w| / (KP)`.
    L1,
    /// `alpha * sum w^2 / (KP)`.
    SquaredL2,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse_group" => Ok(Variant::SparseGroup),
            "group_only" => Ok(Variant::GroupOnly),
            "exclusive_only" => Ok(Variant::ExclusiveOnly),
            "l1" => Ok(Variant::L1),
            "squared_l2" => Ok(Variant::SquaredL2),
            _ => Err(Error::config(format!("unknown regularizer variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::SparseGroup => "sparse_group",
            Variant::GroupOnly => "group_only",
            Variant::ExclusiveOnly => "exclusive_only",
            Variant::L1 => "l1",
            Variant::SquaredL2 => "squared_l2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub variant: Variant,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            beta: 1e-2,
            variant: Variant::SparseGroup,
        }
    }
}

impl RegularizerConfig {
    pub fn new(alpha: f64, beta: f64, variant: Variant) -> Result<Self> {
        let cfg = Self {
            alpha,
            beta,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-feature weights of the exclusive penalty, frozen from the ancestors.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusiveWeights(pub Array1<f64>);

impl ExclusiveWeights {
    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }
}

fn check_dims(models: &ClusterModels, data: &NodeData<'_>) -> Result<()> {
    if models.dim() != data.dim() {
        return Err(Error::validation(format!(
            "model dimension {} differs from feature dimension {}",
            models.dim(),
            data.dim()
        )));
    }
    Ok(())
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::validation(format!(
            "{} labels for {n} instances",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::validation(format!(
            "label {l} out of range for {k} clusters"
        )));
    }
    Ok(())
}

/// Assignment costs from a score matrix `scores[i, y] = w_y . x_i`.
pub(crate) fn costs_from_scores(scores: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = scores.dim();
    let mut costs = Array2::zeros((n, k));
    for i in 0..n {
        let row = scores.row(i);
        for y in 0..k {
            let mut c = 0.0;
            for other in 0..k {
                if other != y {
                    let m = 1.0 - row[y] + row[other];
                    if m > 0.0 {
                        c += m * m;
                    }
                }
            }
            costs[[i, y]] = c;
        }
    }
    costs
}

/// `C[i, y]`: hinge cost of putting member `i` in cluster `y`.
pub fn cost_matrix(models: &ClusterModels, data: &NodeData<'_>) -> Result<Array2<f64>> {
    check_dims(models, data)?;
    let scores = data.to_matrix().dot(&models.weights().t());
    Ok(costs_from_scores(scores.view()))
}

/// Squared hinge loss of the labeling.
pub fn hinge_loss(models: &ClusterModels, data: &NodeData<'_>, labels: &[usize]) -> Result<f64> {
    check_dims(models, data)?;
    check_labels(labels, data.len(), models.k())?;
    Ok(HingeProblem::new(data.to_matrix(), labels.to_vec(), models.k()).loss(models.weights()))
}

/// Gradient of [`hinge_loss`] with respect to the weights.
pub fn hinge_grad(
    models: &ClusterModels,
    data: &NodeData<'_>,
    labels: &[usize],
) -> Result<Array2<f64>> {
    check_dims(models, data)?;
    check_labels(labels, data.len(), models.k())?;
    Ok(
        HingeProblem::new(data.to_matrix(), labels.to_vec(), models.k())
            .loss_and_grad(models.weights())
            .1,
    )
}

/// The smooth part of the split objective on a dense copy of the node data.
#[derive(Debug, Clone)]
pub(crate) struct HingeProblem {
    x: Array2<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl HingeProblem {
    pub(crate) fn new(x: Array2<f64>, labels: Vec<usize>, k: usize) -> Self {
        Self { x, labels, k }
    }

    fn norm(&self) -> f64 {
        1.0 / (self.x.nrows() as f64 * self.k as f64)
    }

    pub(crate) fn loss(&self, w: &Array2<f64>) -> f64 {
        let scores = self.x.dot(&w.t());
        let mut total = 0.0;
        for (i, &yi) in self.labels.iter().enumerate() {
            let row = scores.row(i);
            for y in 0..self.k {
                if y != yi {
                    let m = 1.0 - row[yi] + row[y];
                    if m > 0.0 {
                        total += m * m;
                    }
                }
            }
        }
        total * self.norm()
    }

    pub(crate) fn loss_and_grad(&self, w: &Array2<f64>) -> (f64, Array2<f64>) {
        let scores = self.x.dot(&w.t());
        let mut dscores = Array2::<f64>::zeros(scores.dim());
        let mut total = 0.0;
        for (i, &yi) in self.labels.iter().enumerate() {
            let row = scores.row(i);
            for y in 0..self.k {
                if y != yi {
                    let m = 1.0 - row[yi] + row[y];
                    if m > 0.0 {
                        total += m * m;
                        dscores[[i, yi]] -= 2.0 * m;
                        dscores[[i, y]] += 2.0 * m;
                    }
                }
            }
        }
        let norm = self.norm();
        let grad = dscores.t().dot(&self.x) * norm;
        (total * norm, grad)
    }
}

/// `G(w)`: mean over features of the column l2 norms, divided by `K`.
pub fn group_reg(models: &ClusterModels) -> f64 {
    group_penalty(models.weights())
}

pub(crate) fn group_penalty(w: &Array2<f64>) -> f64 {
    let (k, p) = w.dim();
    let sum: f64 = w.axis_iter(Axis(1)).map(|col| col.dot(&col).sqrt()).sum();
    sum / (p as f64 * k as f64)
}

/// `lambda_E[p] = sum_a |w_{a k_a, p}| / (K |A| P)`; zero for an empty chain.
pub fn exclusive_weights(chain: &AncestorChain, k: usize, p: usize) -> Result<ExclusiveWeights> {
    let mut out = Array1::zeros(p);
    if chain.is_empty() {
        return Ok(ExclusiveWeights(out));
    }
    for row in chain.path_models() {
        if row.len() != p {
            return Err(Error::validation(format!(
                "ancestor model dimension {} differs from {p}",
                row.len()
            )));
        }
        out.zip_mut_with(&row, |o, &v| *o += v.abs());
    }
    out /= k as f64 * chain.len() as f64 * p as f64;
    Ok(ExclusiveWeights(out))
}

/// `E(w)` for frozen ancestors.
pub fn exclusive_reg(models: &ClusterModels, chain: &AncestorChain) -> Result<f64> {
    let lambda = exclusive_weights(chain, models.k(), models.dim())?;
    Ok(exclusive_penalty(models.weights(), &lambda))
}

pub(crate) fn exclusive_penalty(w: &Array2<f64>, lambda: &ExclusiveWeights) -> f64 {
    w.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(lambda.0.iter())
                .map(|(a, l)| a.abs() * l)
                .sum::<f64>()
        })
        .sum()
}

/// The configured penalty value for weights `w`.
pub(crate) fn penalty(w: &Array2<f64>, lambda: &ExclusiveWeights, reg: &RegularizerConfig) -> f64 {
    let (k, p) = w.dim();
    let kp = (k * p) as f64;
    match reg.variant {
        Variant::SparseGroup => {
            reg.alpha * group_penalty(w) + reg.beta * exclusive_penalty(w, lambda)
        }
        Variant::GroupOnly => reg.alpha * group_penalty(w),
        Variant::ExclusiveOnly => reg.beta * exclusive_penalty(w, lambda),
        Variant::L1 => reg.alpha * w.iter().map(|v| v.abs()).sum::<f64>() / kp,
        Variant::SquaredL2 => reg.alpha * w.iter().map(|v| v * v).sum::<f64>() / kp,
    }
}

/// Penalty part of the node objective.
pub fn regularizer(
    models: &ClusterModels,
    chain: &AncestorChain,
    reg: &RegularizerConfig,
) -> Result<f64> {
    let lambda = exclusive_weights(chain, models.k(), models.dim())?;
    Ok(penalty(models.weights(), &lambda, reg))
}

/// Split objective: configured penalty plus hinge loss.
pub fn node_objective(
    models: &ClusterModels,
    labels: &[usize],
    chain: &AncestorChain,
    data: &NodeData<'_>,
    reg: &RegularizerConfig,
) -> Result<f64> {
    Ok(regularizer(models, chain, reg)? + hinge_loss(models, data, labels)?)
}
