//! Greedy top-down hierarchy construction.
//!
//! Each round proposes a split for every eligible leaf, reusing the cached
//! proposal of leaves seen in earlier rounds, then finalizes the leaf with the
//! highest splitting score (lowest id on ties) and adds its children as new
//! leaves. The stopping criterion is checked before every round.
//!
//! Proposals are seeded from `(config seed, node id)` only, so evaluation
//! order, caching and the parallel backend never change the result. A
//! finalized split is never revisited: its ancestors were frozen when it was
//! proposed and cannot change afterwards.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objective::{node_objective, RegularizerConfig};
use crate::optim::SolverConfig;
use crate::par;
use crate::seed;
use crate::split::{split_node, DEFAULT_MAX_ALTERNATIONS};
use crate::tree::{ClusterModels, Hierarchy, NodeId, SplitRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingCriterion {
    /// Stop once there are at least this many leaves.
    MaxLeaves(usize),
    /// Stop once every leaf has fewer members than this; smaller leaves are
    /// not split.
    MinNodeSize(usize),
    /// Stop once some node reaches this depth.
    MaxHeight(usize),
}

impl StoppingCriterion {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            StoppingCriterion::MaxLeaves(v)
            | StoppingCriterion::MinNodeSize(v)
            | StoppingCriterion::MaxHeight(v) => v,
        };
        if v == 0 {
            return Err(Error::config("stopping bound must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Branching factor of every split.
    pub k: usize,
    pub stop: StoppingCriterion,
    pub reg: RegularizerConfig,
    pub solver: SolverConfig,
    pub seed: u64,
    pub max_alternations: usize,
}

impl BuildConfig {
    pub fn new(k: usize, stop: StoppingCriterion, reg: RegularizerConfig, seed: u64) -> Self {
        Self {
            k,
            stop,
            reg,
            solver: SolverConfig::default(),
            seed,
            max_alternations: DEFAULT_MAX_ALTERNATIONS,
        }
    }
}

/// A proposed split of one leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Cluster of each member, aligned with the node's member list.
    pub labels: Vec<usize>,
    pub score: f64,
    pub models: Option<ClusterModels>,
    /// The splitter's own objective for this split, if it has one.
    pub objective: Option<f64>,
}

/// Produces candidate splits for the greedy builder.
pub trait Splitter: Sync {
    /// Proposes a `k`-way split of leaf `node`, or `None` if it cannot be split.
    fn propose(
        &self,
        dataset: &Dataset,
        hierarchy: &Hierarchy,
        node: NodeId,
        k: usize,
        seed: u64,
    ) -> Result<Option<Candidate>>;
}

/// Maximum-margin splitter with the configured penalty.
#[derive(Debug, Clone, Copy)]
pub struct MarginSplitter {
    pub reg: RegularizerConfig,
    pub solver: SolverConfig,
    pub max_alternations: usize,
}

impl From<&BuildConfig> for MarginSplitter {
    fn from(cfg: &BuildConfig) -> Self {
        Self {
            reg: cfg.reg,
            solver: cfg.solver,
            max_alternations: cfg.max_alternations,
        }
    }
}

impl Splitter for MarginSplitter {
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
        let chain = hierarchy.ancestor_chain(node)?;
        let data = dataset.subset(members)?;
        let r = split_node(
            &data,
            &chain,
            k,
            &self.reg,
            &self.solver,
            seed,
            self.max_alternations,
        )?;
        Ok(Some(Candidate {
            labels: r.labels,
            score: r.score,
            models: Some(r.models),
            objective: Some(r.objective),
        }))
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub hierarchy: Hierarchy,
    /// Set when no leaf could be split before the stopping criterion held.
    pub exhausted: bool,
}

/// Seed used for the proposal of `node`.
pub fn node_seed(seed: u64, node: NodeId) -> u64 {
    seed::derive(seed, node as u64)
}

/// Whether the stopping criterion holds for `hierarchy`.
pub fn should_stop(hierarchy: &Hierarchy, stop: StoppingCriterion) -> bool {
    match stop {
        StoppingCriterion::MaxLeaves(f) => hierarchy.leaf_count() >= f,
        StoppingCriterion::MinNodeSize(m) => hierarchy
            .leaves()
            .iter()
            .all(|&id| hierarchy.nodes()[id - 1].len() < m),
        StoppingCriterion::MaxHeight(h) => hierarchy.height() >= h,
    }
}

fn eligible(hierarchy: &Hierarchy, id: NodeId, stop: StoppingCriterion) -> bool {
    match stop {
        StoppingCriterion::MinNodeSize(m) => hierarchy.nodes()[id - 1].len() >= m,
        _ => true,
    }
}

/// The greedy builder shared by every hierarchical method.
pub fn build_with<S: Splitter>(
    dataset: &Dataset,
    k: usize,
    stop: StoppingCriterion,
    seed: u64,
    splitter: &S,
) -> Result<BuildOutcome> {
    stop.validate()?;
    if k < 2 {
        return Err(Error::config(format!(
            "branching factor must be at least 2, got {k}"
        )));
    }
    if dataset.len() < k {
        return Err(Error::validation(format!(
            "{} instances cannot be split into {k} clusters",
            dataset.len()
        )));
    }
    let mut hierarchy = Hierarchy::new(dataset.len());
    let mut cache: BTreeMap<NodeId, Option<Candidate>> = BTreeMap::new();
    let mut exhausted = false;
    let mut round = 0;

    while !should_stop(&hierarchy, stop) {
        let leaves: Vec<NodeId> = hierarchy
            .leaves()
            .into_iter()
            .filter(|&id| eligible(&hierarchy, id, stop))
            .collect();
        let pending: Vec<NodeId> = leaves
            .iter()
            .copied()
            .filter(|id| !cache.contains_key(id))
            .collect();
        let proposals = par::map_slice(&pending, |&id| {
            splitter.propose(dataset, &hierarchy, id, k, node_seed(seed, id))
        });
        for (id, proposal) in pending.into_iter().zip(proposals) {
            cache.insert(id, proposal?);
        }

        let mut best: Option<(NodeId, f64)> = None;
        for &id in &leaves {
            if let Some(Some(c)) = cache.get(&id) {
                let selectable = !c.score.is_nan() && c.score != f64::NEG_INFINITY;
                if selectable && best.is_none_or(|(_, s)| c.score > s) {
                    best = Some((id, c.score));
                }
            }
        }
        let Some((chosen, score)) = best else {
            log::warn!("no splittable leaf left after {round} rounds");
            exhausted = true;
            break;
        };
        let candidate = cache
            .remove(&chosen)
            .flatten()
            .expect("chosen leaf has a cached candidate");
        hierarchy.split(
            chosen,
            SplitRecord {
                k,
                labels: candidate.labels,
                models: candidate.models,
                score,
                objective: candidate.objective,
            },
        )?;
        round += 1;
        log::info!(
            "round={round} node={chosen} score={score:.6e} leaves={}",
            hierarchy.leaf_count()
        );
    }
    Ok(BuildOutcome {
        hierarchy,
        exhausted,
    })
}

/// Hierarchical maximum-margin clustering.
pub fn build_hierarchy(dataset: &Dataset, config: &BuildConfig) -> Result<BuildOutcome> {
    config.reg.validate()?;
    config.solver.validate()?;
    build_with(
        dataset,
        config.k,
        config.stop,
        config.seed,
        &MarginSplitter::from(config),
    )
}

/// Sum of the split objectives of all internal nodes, each with its own
/// frozen ancestor chain. Reporting only; the builder never optimizes it.
pub fn global_objective(
    hierarchy: &Hierarchy,
    dataset: &Dataset,
    reg: &RegularizerConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for node in hierarchy.nodes().iter().filter(|n| !n.is_leaf()) {
        let (models, labels) = match (&node.models, &node.labels) {
            (Some(m), Some(l)) => (m, l),
            _ => {
                return Err(Error::structural(format!(
                    "internal node {} has no fitted models",
                    node.id
                )))
            }
        };
        let chain = hierarchy.ancestor_chain(node.id)?;
        let data = dataset.subset(node.members.clone())?;
        total += node_objective(models, labels, &chain, &data, reg)?;
    }
    Ok(total)
}
