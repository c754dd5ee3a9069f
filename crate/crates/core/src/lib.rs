//! Hierarchical maximum-margin clustering.
//!
//! A cluster tree is grown top-down. Every split of a node fits one linear
//! model per child cluster with a squared-hinge maximum-margin loss, a group
//! sparsity penalty shared by the sibling models and an exclusive sparsity
//! penalty against the models on the path from the root. Cluster assignments
//! are kept balanced by solving a min-cost-flow problem.
//!
//! Module map:
//!
//! * [`data`] and [`tree`]: datasets, node views, hierarchies, ancestor chains.
//! * [`flow`]: capacity-scaling min-cost flow and the balanced assignment reduction.
//! * [`objective`]: loss, regularizers and per-node objective.
//! * [`optim`]: proximal operators and the proximal quasi-Newton weight update.
//! * [`split`]: alternating descent for a single node split.
//! * [`hier`]: the greedy top-down builder, shared by all hierarchical methods.
//! * [`baselines`]: k-means, HKM and HKM-D.
//! * [`metrics`]: tree similarities, semantic scores and the Rand index.
//! * [`io`] and [`experiment`]: file formats, PCA, synthetic data, experiment runs.
//!
//! With the default `parallel` feature, candidate splits, k-means assignment
//! steps and pairwise metric loops run on rayon. Disabling it gives a purely
//! sequential build with identical results.
//!
//! Models carry no bias term, so features should be centered before clustering.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod hier;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod par;
pub mod seed;
pub mod split;
pub mod tree;

pub use data::{Dataset, NodeData};
pub use error::{Error, Result};
pub use tree::{AncestorChain, AncestorLink, ClusterModels, Hierarchy, NodeId, TreeNode};
