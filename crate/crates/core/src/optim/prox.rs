use ndarray::{Array1, Array2, Axis};

use crate::objective::{ExclusiveWeights, RegularizerConfig, Variant};

/// Penalty weights needed by [`prox_sparse_group`], before scaling by a step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxSpec {
    /// `beta * lambda_E[p]`, shared by the `K` rows.
    pub l1_weights: Array1<f64>,
    /// `alpha * lambda_G` with `lambda_G = 1 / (PK)`.
    pub group_weight: f64,
    /// `alpha / (KP)`, used by the l1 and squared-l2 variants.
    pub uniform_weight: f64,
    pub variant: Variant,
}

impl ProxSpec {
    pub fn new(reg: &RegularizerConfig, lambda: &ExclusiveWeights, k: usize) -> Self {
        let p = lambda.0.len();
        let kp = (k * p) as f64;
        Self {
            l1_weights: &lambda.0 * reg.beta,
            group_weight: reg.alpha / kp,
            uniform_weight: reg.alpha / kp,
            variant: reg.variant,
        }
    }
}

/// Entrywise soft-thresholding, `sign(w) [|w| - t_p]_+` with one threshold per column.
pub fn prox_weighted_l1(w: &Array2<f64>, thresholds: &Array1<f64>) -> Array2<f64> {
    let mut out = w.clone();
    for mut row in out.rows_mut() {
        row.zip_mut_with(thresholds, |v, &t| *v = soft(*v, t));
    }
    out
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Column-wise group soft-thresholding: each feature column is shrunk toward
/// zero by `t` in l2 norm, and zeroed when its norm is at most `t`.
pub fn prox_group(w: &Array2<f64>, t: f64) -> Array2<f64> {
    let mut out = w.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm <= t || norm == 0.0 {
            col.fill(0.0);
        } else {
            col *= (norm - t) / norm;
        }
    }
    out
}

/// Proximal map of `s` times the configured penalty.
///
/// For the sparse-group penalty this is the weighted l1 shrink followed by the
/// group shrink; the other variants use the matching single step, and squared
/// l2 has the closed form `w / (1 + 2 s alpha / (KP))`.
pub fn prox_sparse_group(w: &Array2<f64>, spec: &ProxSpec, s: f64) -> Array2<f64> {
    match spec.variant {
        Variant::SparseGroup => {
            let l1 = prox_weighted_l1(w, &(&spec.l1_weights * s));
            prox_group(&l1, s * spec.group_weight)
        }
        Variant::GroupOnly => prox_group(w, s * spec.group_weight),
        Variant::ExclusiveOnly => prox_weighted_l1(w, &(&spec.l1_weights * s)),
        Variant::L1 => {
            let t = Array1::from_elem(w.ncols(), s * spec.uniform_weight);
            prox_weighted_l1(w, &t)
        }
        Variant::SquaredL2 => w / (1.0 + 2.0 * s * spec.uniform_weight),
    }
}
