//! Experiment runs: load data, cluster with restarts, evaluate, write outputs.
//!
//! An [`ExperimentSpec`] can be read from a flat `key = value` file and then
//! overridden key by key, which is how the command-line tool applies its
//! flags. The best restart is picked by the method's own criterion (split
//! objective for the maximum-margin methods, leaf inertia for the k-means
//! family), never by the evaluation metrics.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    build_hkm, build_hkm_d, kmeans, leaf_inertia, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hier::{
    build_hierarchy, global_objective, BuildConfig, BuildOutcome, StoppingCriterion,
};
use crate::io::{
    export_hierarchy, hierarchy_to_json, load_dataset, pca_reduce, standardize, ExportFormat,
    ExportOptions, Format, LoadOptions,
};
use crate::metrics::{
    rand_index, semantic_score, BranchConvention, ClassTree, Learned, ScoreOptions, TreeMetric,
};
use crate::objective::{RegularizerConfig, Variant};
use crate::optim::SolverConfig;
use crate::seed;
use crate::split::DEFAULT_MAX_ALTERNATIONS;
use crate::tree::{Hierarchy, SplitRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Hmmc,
    Hkm,
    HkmD,
    KmeansFlat,
    MmcFlat,
}

impl Method {
    pub fn is_flat(&self) -> bool {
        matches!(self, Method::KmeansFlat | Method::MmcFlat)
    }

    fn uses_margin(&self) -> bool {
        matches!(self, Method::Hmmc | Method::MmcFlat)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmmc" => Ok(Method::Hmmc),
            "hkm" => Ok(Method::Hkm),
            "hkm_d" => Ok(Method::HkmD),
            "kmeans_flat" => Ok(Method::KmeansFlat),
            "mmc_flat" => Ok(Method::MmcFlat),
            _ => Err(Error::config(format!("unknown method {s:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Hmmc => "hmmc",
            Method::Hkm => "hkm",
            Method::HkmD => "hkm_d",
            Method::KmeansFlat => "kmeans_flat",
            Method::MmcFlat => "mmc_flat",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub input: Option<PathBuf>,
    pub format: Format,
    pub load: LoadOptions,
    /// JSON class tree for semantic scores; a flat tree over the labels otherwise.
    pub truth: Option<PathBuf>,
    pub standardize: bool,
    pub pca: Option<usize>,
    pub method: Method,
    /// Branching factor; the cluster count for flat methods.
    pub k: usize,
    pub stop: StoppingCriterion,
    pub reg: RegularizerConfig,
    pub solver: SolverConfig,
    pub max_alternations: usize,
    pub seed: u64,
    pub restarts: usize,
    pub ps_convention: BranchConvention,
    pub pair_budget: Option<usize>,
    pub hierarchy_out: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub export_format: ExportFormat,
    pub top_features: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            input: None,
            format: Format::Csv,
            load: LoadOptions::default(),
            truth: None,
            standardize: false,
            pca: None,
            method: Method::Hmmc,
            k: 2,
            stop: StoppingCriterion::MaxLeaves(4),
            reg: RegularizerConfig::default(),
            solver: SolverConfig::default(),
            max_alternations: DEFAULT_MAX_ALTERNATIONS,
            seed: 0,
            restarts: 1,
            ps_convention: BranchConvention::IncludeLeaf,
            pair_budget: None,
            hierarchy_out: None,
            report_out: None,
            export_format: ExportFormat::Json,
            top_features: crate::io::DEFAULT_TOP_FEATURES,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid value {value:?} for {key}"))),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl ExperimentSpec {
    /// Keys accepted by [`ExperimentSpec::set`].
    pub const KEYS: &'static [&'static str] = &[
        "input",
        "format",
        "header",
        "label_column",
        "truth",
        "standardize",
        "pca",
        "method",
        "k",
        "max_leaves",
        "min_node_size",
        "max_height",
        "alpha",
        "beta",
        "variant",
        "max_outer_iters",
        "lbfgs_memory",
        "inner_prox_iters",
        "rel_obj_tol",
        "max_alternations",
        "seed",
        "restarts",
        "ps_convention",
        "pair_budget",
        "hierarchy_out",
        "report_out",
        "export_format",
        "top_features",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "input" => self.input = optional(key, value)?,
            "format" => self.format = value.parse()?,
            "header" => self.load.header = parse_bool(key, value)?,
            "label_column" => self.load.label_column = parse_bool(key, value)?,
            "truth" => self.truth = optional(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            "pca" => self.pca = optional(key, value)?,
            "method" => self.method = value.parse()?,
            "k" => self.k = parse(key, value)?,
            "max_leaves" => self.stop = StoppingCriterion::MaxLeaves(parse(key, value)?),
            "min_node_size" => self.stop = StoppingCriterion::MinNodeSize(parse(key, value)?),
            "max_height" => self.stop = StoppingCriterion::MaxHeight(parse(key, value)?),
            "alpha" => self.reg.alpha = parse(key, value)?,
            "beta" => self.reg.beta = parse(key, value)?,
            "variant" => self.reg.variant = value.parse::<Variant>()?,
            "max_outer_iters" => self.solver.max_outer_iters = parse(key, value)?,
            "lbfgs_memory" => self.solver.lbfgs_memory = parse(key, value)?,
            "inner_prox_iters" => self.solver.inner_prox_iters = parse(key, value)?,
            "rel_obj_tol" => self.solver.rel_obj_tol = parse(key, value)?,
            "max_alternations" => self.max_alternations = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "restarts" => self.restarts = parse(key, value)?,
            "ps_convention" => {
                self.ps_convention = match value {
                    "include_leaf" => BranchConvention::IncludeLeaf,
                    "parent_only" => BranchConvention::ParentOnly,
                    _ => return Err(Error::config(format!("invalid value {value:?} for {key}"))),
                }
            }
            "pair_budget" => self.pair_budget = optional(key, value)?,
            "hierarchy_out" => self.hierarchy_out = optional(key, value)?,
            "report_out" => self.report_out = optional(key, value)?,
            "export_format" => self.export_format = value.parse()?,
            "top_features" => self.top_features = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: PathBuf::from("<config>"),
                line: idx + 1,
                message: format!("expected key = value, got {raw:?}"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_kv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::default();
        spec.apply_kv(&text)?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::config(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts must be at least 1"));
        }
        self.stop.validate()?;
        self.reg.validate()?;
        self.solver.validate()
    }

    pub fn build_config(&self, seed: u64) -> BuildConfig {
        BuildConfig {
            k: self.k,
            stop: self.stop,
            reg: self.reg,
            solver: self.solver,
            seed,
            max_alternations: self.max_alternations,
        }
    }
}

/// Seed of restart `r`; the first restart uses the spec seed itself.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        seed::derive(seed, r as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub sp: f64,
    pub ps: f64,
    pub ri: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: Method,
    pub k: usize,
    pub stop: StoppingCriterion,
    pub reg: RegularizerConfig,
    pub seed: u64,
    pub instances: usize,
    pub dim: usize,
    pub leaf_count: usize,
    pub split_count: usize,
    pub height: usize,
    pub exhausted: bool,
    pub selected_restart: usize,
    /// Selection criterion of every restart, lower is better.
    pub restart_criteria: Vec<f64>,
    pub objective: Option<f64>,
    pub inertia: f64,
    /// Fraction of exactly-zero model weights over all fitted splits.
    pub sparsity: Option<f64>,
    pub evaluation: Option<Evaluation>,
    pub runtime_secs: f64,
}

impl Report {
    /// JSON with the runtime zeroed, for reproducibility comparisons.
    pub fn to_json_without_runtime(&self) -> Result<String> {
        let mut r = self.clone();
        r.runtime_secs = 0.0;
        Ok(serde_json::to_string_pretty(&r)?)
    }
}

/// Result of one clustering run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub hierarchy: Hierarchy,
    pub exhausted: bool,
    pub report: Report,
}

/// A single-split hierarchy holding a flat k-means clustering.
fn flat_kmeans(dataset: &Dataset, k: usize, seed: u64) -> Result<BuildOutcome> {
    let km = kmeans(&dataset.all(), k, seed, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let mut hierarchy = Hierarchy::new(dataset.len());
    hierarchy.split(
        1,
        SplitRecord {
            k,
            labels: km.labels,
            models: None,
            score: -km.inertia,
            objective: Some(km.inertia),
        },
    )?;
    Ok(BuildOutcome {
        hierarchy,
        exhausted: false,
    })
}

fn run_once(spec: &ExperimentSpec, dataset: &Dataset, seed: u64) -> Result<BuildOutcome> {
    let config = spec.build_config(seed);
    match spec.method {
        Method::Hmmc => build_hierarchy(dataset, &config),
        Method::Hkm => build_hkm(dataset, &config),
        Method::HkmD => build_hkm_d(dataset, &config),
        Method::KmeansFlat => flat_kmeans(dataset, spec.k, seed),
        Method::MmcFlat => {
            let config = BuildConfig {
                stop: StoppingCriterion::MaxLeaves(spec.k),
                ..config
            };
            build_hierarchy(dataset, &config)
        }
    }
}

fn model_sparsity(hierarchy: &Hierarchy) -> Option<f64> {
    let (mut zeros, mut total) = (0usize, 0usize);
    for m in hierarchy.nodes().iter().filter_map(|n| n.models.as_ref()) {
        zeros += m.weights().iter().filter(|&&v| v == 0.0).count();
        total += m.weights().len();
    }
    (total > 0).then(|| zeros as f64 / total as f64)
}

/// SP, PS and RI of `hierarchy` against the dataset labels. Flat results are
/// scored with the same-cluster convention instead of their tree.
pub fn evaluate(
    hierarchy: &Hierarchy,
    flat: bool,
    dataset: &Dataset,
    truth: &ClassTree,
    convention: BranchConvention,
    pair_budget: Option<usize>,
    seed: u64,
) -> Result<Evaluation> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::validation("dataset has no ground-truth labels"))?;
    let partition = hierarchy.leaf_partition()?;
    let flat_labels: Vec<usize>;
    let learned = if flat {
        if hierarchy.split_count() != 1 {
            return Err(Error::validation(
                "a flat clustering must be a single split of the root",
            ));
        }
        // Leaf ids of a single root split are 2..=k+1.
        flat_labels = partition.iter().map(|&id| id - 2).collect();
        Learned::Flat(&flat_labels)
    } else {
        Learned::Hierarchy(hierarchy)
    };
    let opts = |metric| ScoreOptions {
        metric,
        convention,
        pair_budget,
        seed,
    };
    Ok(Evaluation {
        sp: semantic_score(learned, truth, dataset, &opts(TreeMetric::ShortestPath))?,
        ps: semantic_score(learned, truth, dataset, &opts(TreeMetric::PathSharing))?,
        ri: rand_index(&partition, labels)?,
    })
}

/// Runs `spec` on an in-memory dataset. `truth` defaults to a flat class tree
/// over the dataset labels; nothing is evaluated without labels.
pub fn run_on(
    spec: &ExperimentSpec,
    dataset: &Dataset,
    truth: Option<&ClassTree>,
) -> Result<RunOutput> {
    spec.validate()?;
    let start = Instant::now();
    let mut best: Option<(usize, f64, BuildOutcome)> = None;
    let mut criteria = Vec::with_capacity(spec.restarts);
    for r in 0..spec.restarts {
        let outcome = run_once(spec, dataset, restart_seed(spec.seed, r))?;
        let criterion = if spec.method.uses_margin() {
            global_objective(&outcome.hierarchy, dataset, &spec.reg)?
        } else {
            leaf_inertia(&outcome.hierarchy, dataset)?
        };
        log::info!("restart={r} criterion={criterion:.6e}");
        criteria.push(criterion);
        if best.as_ref().is_none_or(|(_, c, _)| criterion < *c) {
            best = Some((r, criterion, outcome));
        }
    }
    let (selected, criterion, outcome) = best.expect("at least one restart");
    let hierarchy = outcome.hierarchy;

    let fallback;
    let evaluation = match (dataset.labels(), truth) {
        (None, _) => None,
        (Some(labels), t) => {
            let tree = match t {
                Some(t) => t,
                None => {
                    fallback = ClassTree::flat(labels.iter().map(String::as_str))?;
                    &fallback
                }
            };
            Some(evaluate(
                &hierarchy,
                spec.method.is_flat(),
                dataset,
                tree,
                spec.ps_convention,
                spec.pair_budget,
                spec.seed,
            )?)
        }
    };

    let report = Report {
        method: spec.method,
        k: spec.k,
        stop: spec.stop,
        reg: spec.reg,
        seed: spec.seed,
        instances: dataset.len(),
        dim: dataset.dim(),
        leaf_count: hierarchy.leaf_count(),
        split_count: hierarchy.split_count(),
        height: hierarchy.height(),
        exhausted: outcome.exhausted,
        selected_restart: selected,
        restart_criteria: criteria,
        objective: spec.method.uses_margin().then_some(criterion),
        inertia: leaf_inertia(&hierarchy, dataset)?,
        sparsity: model_sparsity(&hierarchy),
        evaluation,
        runtime_secs: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        hierarchy,
        exhausted: outcome.exhausted,
        report,
    })
}

/// Loads and preprocesses the input named by `spec`.
pub fn prepare_dataset(spec: &ExperimentSpec) -> Result<Dataset> {
    let input = spec
        .input
        .as_ref()
        .ok_or_else(|| Error::config("no input file given"))?;
    let mut dataset = load_dataset(input, spec.format, &spec.load)?;
    if spec.standardize {
        dataset = standardize(&dataset)?;
    }
    if let Some(d) = spec.pca {
        dataset = pca_reduce(&dataset, d, true)?;
    }
    Ok(dataset)
}

pub fn load_class_tree(path: impl AsRef<Path>) -> Result<ClassTree> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tree: ClassTree = serde_json::from_str(&text)?;
    tree.validate()?;
    Ok(tree)
}

/// Loads data, clusters, evaluates and writes the configured outputs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report> {
    let dataset = prepare_dataset(spec)?;
    let truth = spec.truth.as_ref().map(load_class_tree).transpose()?;
    let out = run_on(spec, &dataset, truth.as_ref())?;
    if let Some(path) = &spec.hierarchy_out {
        let opts = ExportOptions {
            top_features: spec.top_features,
        };
        export_hierarchy(&out.hierarchy, path, spec.export_format, &opts)?;
    }
    if let Some(path) = &spec.report_out {
        let text = serde_json::to_string_pretty(&out.report)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(out.report)
}

/// Canonical JSON of a hierarchy, handy for byte-level comparisons.
pub fn canonical_json(hierarchy: &Hierarchy) -> Result<String> {
    hierarchy_to_json(hierarchy, &ExportOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_and_overrides() {
        let mut spec = ExperimentSpec::default();
        spec.apply_kv("# sweep\nmethod = hkm_d\nk=3\nmax_leaves = 5\nalpha=0.1\n\nvariant = l1\n")
            .unwrap();
        assert_eq!(spec.method, Method::HkmD);
        assert_eq!(spec.k, 3);
        assert_eq!(spec.stop, StoppingCriterion::MaxLeaves(5));
        assert_eq!(spec.reg.alpha, 0.1);
        assert_eq!(spec.reg.variant, Variant::L1);
        spec.set("min_node_size", "20").unwrap();
        assert_eq!(spec.stop, StoppingCriterion::MinNodeSize(20));
        assert!(spec.set("bogus", "1").is_err());
        assert!(spec.apply_kv("no equals sign").is_err());
        assert!(spec.set("restarts", "x").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let samples = [
            ("format", "libsvm"),
            ("method", "mmc_flat"),
            ("ps_convention", "parent_only"),
            ("export_format", "dot"),
            ("variant", "group_only"),
        ];
        for key in ExperimentSpec::KEYS {
            let value = samples
                .iter()
                .find(|(k, _)| k == key)
                .map_or("1", |(_, v)| *v);
            let mut spec = ExperimentSpec::default();
            spec.set(key, value)
                .unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn restart_seeds_differ() {
        assert_eq!(restart_seed(7, 0), 7);
        assert_ne!(restart_seed(7, 1), restart_seed(7, 2));
    }
}
