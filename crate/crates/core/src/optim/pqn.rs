//! Proximal quasi-Newton minimization of `H(w) + R(w)` for fixed labels.
//!
//! Each outer iteration minimizes the local model
//!
//! ```text
//! R(u) + H(w) + H'(w).(u - w) + 1/(2s) ||u - w||_B^2
//! ```
//!
//! where `B` is a limited-memory BFGS approximation of the Hessian of `H`.
//! The model is minimized approximately by spectral (Barzilai-Borwein)
//! proximal gradient, and `s` is halved until the step gives sufficient
//! decrease. Every accepted iterate is the output of a proximal map, so
//! exact zeros produced by the penalty survive.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::NodeData;
use crate::error::{Error, Result};
use crate::objective::{
    exclusive_weights, penalty, ExclusiveWeights, HingeProblem, RegularizerConfig,
};
use crate::optim::prox::{prox_sparse_group, ProxSpec};
use crate::tree::{AncestorChain, ClusterModels};

const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    /// Number of curvature pairs kept; 0 gives plain spectral proximal gradient.
    pub lbfgs_memory: usize,
    pub line_search_shrink: f64,
    pub sufficient_decrease: f64,
    pub rel_obj_tol: f64,
    pub inner_prox_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 100,
            lbfgs_memory: 10,
            line_search_shrink: 0.5,
            sufficient_decrease: 1e-4,
            rel_obj_tol: 1e-8,
            inner_prox_iters: 25,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.inner_prox_iters == 0 {
            return Err(Error::config("iteration budgets must be positive"));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::config("line_search_shrink must lie in (0, 1)"));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::config("sufficient_decrease must lie in (0, 1)"));
        }
        if self.rel_obj_tol.is_nan() || self.rel_obj_tol <= 0.0 {
            return Err(Error::config("rel_obj_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WSolution {
    pub models: ClusterModels,
    /// Loss plus penalty at `models`.
    pub objective: f64,
    pub iterations: usize,
    /// Objective at the start point and after each accepted iteration.
    pub history: Vec<f64>,
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Compact BFGS Hessian approximation `B = sigma I + low rank`.
struct Metric {
    sigma: f64,
    pairs: VecDeque<(Array2<f64>, Array2<f64>)>,
    /// `B_j s_j` for each stored pair, with `s_j . B_j s_j`.
    bs: Vec<(Array2<f64>, f64)>,
}

impl Metric {
    fn new(sigma: f64) -> Self {
        Self {
            sigma,
            pairs: VecDeque::new(),
            bs: Vec::new(),
        }
    }

    fn update(&mut self, s: Array2<f64>, y: Array2<f64>, memory: usize) {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        let threshold = 1e-12 * dot(&s, &s).sqrt() * yy.sqrt();
        if sy.is_nan() || sy <= threshold {
            return;
        }
        self.sigma = yy / sy;
        if memory == 0 {
            return;
        }
        if self.pairs.len() == memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        self.rebuild();
    }

    fn rebuild(&mut self) {
        self.bs.clear();
        for j in 0..self.pairs.len() {
            let sj = &self.pairs[j].0;
            let bsj = self.apply_first(sj, j);
            let sbs = dot(sj, &bsj);
            self.bs.push((bsj, sbs));
        }
    }

    /// `B_j v` using the first `j` pairs.
    fn apply_first(&self, v: &Array2<f64>, j: usize) -> Array2<f64> {
        let mut out = v * self.sigma;
        for i in 0..j {
            let (b, sbs) = &self.bs[i];
            let y = &self.pairs[i].1;
            let ys = dot(y, &self.pairs[i].0);
            out.scaled_add(-dot(b, v) / sbs, b);
            out.scaled_add(dot(y, v) / ys, y);
        }
        out
    }

    fn apply(&self, v: &Array2<f64>) -> Array2<f64> {
        self.apply_first(v, self.pairs.len())
    }

    fn is_diagonal(&self) -> bool {
        self.pairs.is_empty()
    }
}

struct Problem<'a> {
    hinge: HingeProblem,
    spec: ProxSpec,
    lambda: ExclusiveWeights,
    reg: &'a RegularizerConfig,
}

impl Problem<'_> {
    fn penalty(&self, w: &Array2<f64>) -> f64 {
        penalty(w, &self.lambda, self.reg)
    }
}

/// Approximately minimizes the local model around `w` for step size `s`.
fn solve_model(
    problem: &Problem<'_>,
    metric: &Metric,
    w: &Array2<f64>,
    grad: &Array2<f64>,
    s: f64,
    inner_iters: usize,
) -> Array2<f64> {
    let model = |u: &Array2<f64>| -> f64 {
        let d = u - w;
        dot(grad, &d) + dot(&d, &metric.apply(&d)) / (2.0 * s) + problem.penalty(u)
    };
    let eta0 = s / metric.sigma;
    let mut u = prox_sparse_group(&(w - &(grad * eta0)), &problem.spec, eta0);
    if metric.is_diagonal() {
        return u;
    }
    let mut best_val = model(&u);
    let mut best = u.clone();
    let mut eta = eta0;
    let mut smooth_grad = grad + &(metric.apply(&(&u - w)) / s);
    for _ in 1..inner_iters {
        let next = prox_sparse_group(&(&u - &(&smooth_grad * eta)), &problem.spec, eta);
        let du = &next - &u;
        let du_norm2 = dot(&du, &du);
        if du_norm2 <= 1e-30 {
            break;
        }
        let dg = metric.apply(&du) / s;
        let curv = dot(&du, &dg);
        eta = if curv > 0.0 {
            (du_norm2 / curv).clamp(1e-12, 1e12)
        } else {
            eta0
        };
        smooth_grad += &dg;
        u = next;
        let val = model(&u);
        if val < best_val {
            best_val = val;
            best = u.clone();
        }
    }
    best
}

/// Fits the split weights for fixed labels, starting from `w0`.
///
/// The returned objective never exceeds the objective at `w0`, and the
/// recorded history is non-increasing.
pub fn solve_w(
    data: &NodeData<'_>,
    labels: &[usize],
    chain: &AncestorChain,
    reg: &RegularizerConfig,
    cfg: &SolverConfig,
    w0: &ClusterModels,
) -> Result<WSolution> {
    cfg.validate()?;
    reg.validate()?;
    let (k, p) = (w0.k(), w0.dim());
    if p != data.dim() {
        return Err(Error::validation(
            "initial weights have the wrong dimension",
        ));
    }
    if labels.len() != data.len() || labels.iter().any(|&l| l >= k) {
        return Err(Error::validation(
            "labels do not match the node or cluster count",
        ));
    }
    if w0.weights().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("initial weights must be finite"));
    }
    let lambda = exclusive_weights(chain, k, p)?;
    let problem = Problem {
        hinge: HingeProblem::new(data.to_matrix(), labels.to_vec(), k),
        spec: ProxSpec::new(reg, &lambda, k),
        lambda,
        reg,
    };

    let mut w = w0.weights().clone();
    let (loss, mut grad) = problem.hinge.loss_and_grad(&w);
    let mut pen = problem.penalty(&w);
    let mut obj = loss + pen;
    if !obj.is_finite() {
        return Err(Error::Solver(format!(
            "objective at the start point is {obj}"
        )));
    }
    let l1: f64 = grad.iter().map(|g| g.abs()).sum();
    let mut metric = Metric::new(l1.max(1.0));
    let mut history = vec![obj];
    let mut iterations = 0;

    for iter in 0..cfg.max_outer_iters {
        let mut s = 1.0;
        let mut accepted = None;
        let mut last_bad = obj;
        for _ in 0..MAX_BACKTRACKS {
            let u = solve_model(&problem, &metric, &w, &grad, s, cfg.inner_prox_iters);
            let d = &u - &w;
            if d.iter().all(|&v| v == 0.0) {
                break;
            }
            let pen_u = problem.penalty(&u);
            let predicted = dot(&grad, &d) + pen_u - pen;
            if predicted.is_nan() || predicted >= 0.0 {
                // No model decrease: w is stationary up to the inner solve.
                break;
            }
            let (loss_u, grad_u) = problem.hinge.loss_and_grad(&u);
            let obj_u = loss_u + pen_u;
            if obj_u.is_finite() && obj_u <= obj + cfg.sufficient_decrease * predicted {
                accepted = Some((u, grad_u, pen_u, obj_u));
                break;
            }
            last_bad = obj_u;
            s *= cfg.line_search_shrink;
        }
        let Some((u, grad_u, pen_u, obj_u)) = accepted else {
            if !last_bad.is_finite() {
                return Err(Error::Solver(format!(
                    "line search diverged at iteration {iter}: objective {last_bad} from {obj}, step {s:e}"
                )));
            }
            break;
        };
        iterations = iter + 1;
        log::trace!("solve_w iteration={iterations} objective={obj_u:.12e} step={s:.3e}");
        let rel = (obj - obj_u) / obj.abs().max(f64::MIN_POSITIVE);
        metric.update(&u - &w, &grad_u - &grad, cfg.lbfgs_memory);
        w = u;
        grad = grad_u;
        pen = pen_u;
        obj = obj_u;
        history.push(obj);
        if rel < cfg.rel_obj_tol || obj == 0.0 {
            break;
        }
    }
    Ok(WSolution {
        models: ClusterModels::from_raw(w),
        objective: obj,
        iterations,
        history,
    })
}
