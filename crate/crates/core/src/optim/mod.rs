//! The weight update of a split: proximal operators for the sparse penalties
//! and a proximal quasi-Newton solver for loss plus penalty.

mod pqn;
mod prox;

pub use pqn::{solve_w, SolverConfig, WSolution};
pub use prox::{prox_group, prox_sparse_group, prox_weighted_l1, ProxSpec};
