//! `hmmc` command-line tool: generate planted data, cluster, evaluate and
//! export hierarchies.
//!
//! Experiment flags carry the names of the `ExperimentSpec` keys and may also
//! come from a `key = value` file given with `--config`; flags given on the
//! command line override the file. Exit status is 0 on success, 1 for invalid
//! input or configuration and 2 when the solver fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmmc::experiment::{
    evaluate, load_class_tree, prepare_dataset, run_experiment, ExperimentSpec,
};
use hmmc::io::{
    export_document, generate_synthetic, hierarchy_from_json, hierarchy_to_dot, ExportFormat,
    ExportOptions, SyntheticSpec,
};
use hmmc::metrics::ClassTree;
use hmmc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hmmc",
    version,
    about = "Hierarchical maximum-margin clustering"
)]
struct Cli {
    /// Increase log detail: -v info, -vv debug, -vvv per-iteration solver trace.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-hierarchy dataset as CSV plus its class tree as JSON.
    Generate(GenerateArgs),
    /// Build a hierarchy and write it together with a run report.
    Cluster(SpecArgs),
    /// Score a saved hierarchy against the labels of a dataset.
    Evaluate(EvaluateArgs),
    /// Convert a saved hierarchy to JSON or Graphviz dot.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Destination CSV; the last column holds the class name.
    #[arg(long)]
    output: PathBuf,
    /// Destination of the ground-truth class tree.
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long = "per_leaf", alias = "per-leaf", default_value_t = 50)]
    per_leaf: usize,
    #[arg(
        long = "informative_dims",
        alias = "informative-dims",
        default_value_t = 10
    )]
    informative_dims: usize,
    #[arg(long = "noise_dims", alias = "noise-dims", default_value_t = 10)]
    noise_dims: usize,
    /// Per-level separation, comma separated, one value per level.
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 3.0])]
    magnitudes: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Experiment settings. Every flag is optional and overrides `--config`.
#[derive(Args, Default)]
struct SpecArgs {
    /// Flat `key = value` file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<String>,
    /// csv or libsvm.
    #[arg(long)]
    format: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    header: Option<String>,
    #[arg(long = "label_column", alias = "label-column", num_args = 0..=1, default_missing_value = "true")]
    label_column: Option<String>,
    /// Ground-truth class tree as JSON; a flat tree over the labels otherwise.
    #[arg(long)]
    truth: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    standardize: Option<String>,
    /// Number of principal components to keep.
    #[arg(long)]
    pca: Option<String>,
    /// hmmc, hkm, hkm_d, kmeans_flat or mmc_flat.
    #[arg(long)]
    method: Option<String>,
    /// Children per split, or clusters for flat methods.
    #[arg(short, long)]
    k: Option<String>,
    #[arg(long = "max_leaves", alias = "max-leaves")]
    max_leaves: Option<String>,
    #[arg(long = "min_node_size", alias = "min-node-size")]
    min_node_size: Option<String>,
    #[arg(long = "max_height", alias = "max-height")]
    max_height: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    /// sparse_group, group_only, exclusive_only, l1 or squared_l2.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long = "max_outer_iters", alias = "max-outer-iters")]
    max_outer_iters: Option<String>,
    #[arg(long = "lbfgs_memory", alias = "lbfgs-memory")]
    lbfgs_memory: Option<String>,
    #[arg(long = "inner_prox_iters", alias = "inner-prox-iters")]
    inner_prox_iters: Option<String>,
    #[arg(long = "rel_obj_tol", alias = "rel-obj-tol")]
    rel_obj_tol: Option<String>,
    #[arg(long = "max_alternations", alias = "max-alternations")]
    max_alternations: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    restarts: Option<String>,
    /// include_leaf or parent_only.
    #[arg(long = "ps_convention", alias = "ps-convention")]
    ps_convention: Option<String>,
    /// Sample this many instance pairs instead of scoring all of them.
    #[arg(long = "pair_budget", alias = "pair-budget")]
    pair_budget: Option<String>,
    #[arg(long = "hierarchy_out", alias = "hierarchy-out")]
    hierarchy_out: Option<String>,
    #[arg(long = "report_out", alias = "report-out")]
    report_out: Option<String>,
    /// json or dot.
    #[arg(long = "export_format", alias = "export-format")]
    export_format: Option<String>,
    #[arg(long = "top_features", alias = "top-features")]
    top_features: Option<String>,
}

impl SpecArgs {
    fn overrides(&self) -> [(&'static str, &Option<String>); 28] {
        [
            ("input", &self.input),
            ("format", &self.format),
            ("header", &self.header),
            ("label_column", &self.label_column),
            ("truth", &self.truth),
            ("standardize", &self.standardize),
            ("pca", &self.pca),
            ("method", &self.method),
            ("k", &self.k),
            ("max_leaves", &self.max_leaves),
            ("min_node_size", &self.min_node_size),
            ("max_height", &self.max_height),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("variant", &self.variant),
            ("max_outer_iters", &self.max_outer_iters),
            ("lbfgs_memory", &self.lbfgs_memory),
            ("inner_prox_iters", &self.inner_prox_iters),
            ("rel_obj_tol", &self.rel_obj_tol),
            ("max_alternations", &self.max_alternations),
            ("seed", &self.seed),
            ("restarts", &self.restarts),
            ("ps_convention", &self.ps_convention),
            ("pair_budget", &self.pair_budget),
            ("hierarchy_out", &self.hierarchy_out),
            ("report_out", &self.report_out),
            ("export_format", &self.export_format),
            ("top_features", &self.top_features),
        ]
    }

    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::from_kv_file(path)?,
            None => ExperimentSpec::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(value) = value {
                spec.set(key, value)?;
            }
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Hierarchy JSON written by `cluster` or `export`.
    #[arg(long)]
    hierarchy: PathBuf,
    #[command(flatten)]
    spec: SpecArgs,
}

#[derive(Args)]
struct ExportArgs {
    /// Hierarchy JSON written by `cluster`.
    #[arg(long)]
    hierarchy: PathBuf,
    /// json or dot.
    #[arg(long = "export_format", alias = "export-format", default_value = "dot")]
    export_format: ExportFormat,
    #[arg(long = "top_features", alias = "top-features", default_value_t = hmmc::io::DEFAULT_TOP_FEATURES)]
    top_features: usize,
    /// Destination file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            })
        }
    }
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let spec = SyntheticSpec {
        depth: args.depth,
        branching: args.branching,
        per_leaf: args.per_leaf,
        informative_dims: args.informative_dims,
        noise_dims: args.noise_dims,
        magnitudes: args.magnitudes.clone(),
        noise: args.noise,
        seed: args.seed,
    };
    let (dataset, tree) = generate_synthetic(&spec)?;
    let labels = dataset.labels().expect("generated data is labelled");
    let mut writer = csv::Writer::from_writer(Vec::new());
    for (row, label) in dataset.features().rows().into_iter().zip(labels) {
        let mut record: Vec<String> = row.iter().map(f64::to_string).collect();
        record.push(label.clone());
        writer.write_record(&record).expect("writing to memory");
    }
    let bytes = writer.into_inner().expect("flushing to memory");
    fs::write(&args.output, bytes).map_err(|e| Error::Io {
        path: args.output.clone(),
        source: e,
    })?;
    let tree_json = serde_json::to_string_pretty(&tree)? + "\n";
    write_text(Some(&args.tree), &tree_json)?;
    log::info!(
        "wrote {} instances of {} classes",
        dataset.len(),
        tree.class_count()
    );
    Ok(())
}

fn cluster(args: &SpecArgs) -> Result<()> {
    let spec = args.spec()?;
    let report = run_experiment(&spec)?;
    if spec.report_out.is_none() {
        write_text(None, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn evaluate_saved(args: &EvaluateArgs) -> Result<()> {
    let spec = args.spec.spec()?;
    let text = fs::read_to_string(&args.hierarchy).map_err(|e| Error::Io {
        path: args.hierarchy.clone(),
        source: e,
    })?;
    let hierarchy = hierarchy_from_json(&text)?;
    let dataset = prepare_dataset(&spec)?;
    if hierarchy.root().len() != dataset.len() {
        return Err(Error::Validation(format!(
            "hierarchy covers {} instances but the dataset has {}",
            hierarchy.root().len(),
            dataset.len()
        )));
    }
    let truth = match &spec.truth {
        Some(path) => load_class_tree(path)?,
        None => {
            let labels = dataset
                .labels()
                .ok_or_else(|| Error::Validation("dataset has no ground-truth labels".into()))?;
            ClassTree::flat(labels.iter().map(String::as_str))?
        }
    };
    let eval = evaluate(
        &hierarchy,
        spec.method.is_flat(),
        &dataset,
        &truth,
        spec.ps_convention,
        spec.pair_budget,
        spec.seed,
    )?;
    let text = serde_json::to_string_pretty(&eval)? + "\n";
    write_text(spec.report_out.as_deref(), &text)
}

fn export(args: &ExportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.hierarchy).map_err(|e| Error::Io {
        path: args.hierarchy.clone(),
        source: e,
    })?;
    let hierarchy = hierarchy_from_json(&text)?;
    let out = match args.export_format {
        ExportFormat::Dot => hierarchy_to_dot(&hierarchy),
        ExportFormat::Json => {
            let opts = ExportOptions {
                top_features: args.top_features,
            };
            serde_json::to_string_pretty(&export_document(&hierarchy, &opts))? + "\n"
        }
    };
    write_text(args.output.as_deref(), &out)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Cluster(args) => cluster(args),
        Command::Evaluate(args) => evaluate_saved(args),
        Command::Export(args) => export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
