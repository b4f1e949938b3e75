//! Command implementations behind the `wisynth` binary.
//!
//! Each subcommand is an ordinary function over parsed arguments so that
//! integration tests can drive the exact code path the binary runs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wisynth_core::baselines::{self, EndModelConfig};
use wisynth_core::inference::{InferenceMethod, PosteriorParams, Provenance};
use wisynth_core::io;
use wisynth_core::synthlab::{self, SimSpec};
use wisynth_core::training::{self, TrainConfig};
use wisynth_core::{
    BuildOptions, FactorModel, IlfOutputMatrix, IlfSpec, LabelGraph, LabelId, PosteriorLabels,
};

#[derive(Parser)]
#[command(name = "wisynth", version, about = "Training-label synthesis from indirect labeling functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Validate a label graph: consistency and distinguishability.
    Check(CheckArgs),
    /// Fit a label model on observed ILF outputs.
    Fit(FitArgs),
    /// Emit posterior label distributions for observed ILF outputs.
    Predict(PredictArgs),
    /// Run a voting or attribute baseline.
    Baseline(BaselineArgs),
    /// Generate a synthetic task bundle.
    Simulate(SimulateArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Train the linear end model on features and posterior labels.
    TrainEnd(TrainEndArgs),
}

#[derive(Args)]
pub struct CheckArgs {
    /// Label graph JSON.
    #[arg(long, conflicts_with = "dag", required_unless_present = "dag")]
    pub graph: Option<PathBuf>,
    /// Taxonomy DAG JSON to convert and check instead of a graph file.
    #[arg(long)]
    pub dag: Option<PathBuf>,
    /// Write the (converted) graph JSON here.
    #[arg(long)]
    pub emit_graph: Option<PathBuf>,
    /// Optional ILF spec JSON; adds an informativeness report.
    #[arg(long)]
    pub ilfs: Option<PathBuf>,
    /// Optional ILF output CSV for the empirical informativeness check.
    #[arg(long)]
    pub outputs: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Plrm,
    Wslg,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub ilfs: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    /// Model family to fit.
    #[arg(long, value_enum, default_value = "plrm")]
    pub kind: KindArg,
    /// Where to write the model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON-lines training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Step size; defaults to 1/m.
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub theta_init: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub positivity_floor: f64,
    #[arg(long, default_value_t = 10)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 2)]
    pub chain_sweeps: usize,
    /// Disable the factor-free unknown class.
    #[arg(long)]
    pub no_unknown: bool,
    /// Ablation: drop pseudo-accuracy factors from the full model.
    #[arg(long)]
    pub no_pseudo_accuracy: bool,
    /// Stronger start for accuracy-type weights; anchors class orientation.
    #[arg(long)]
    pub accuracy_init: Option<f64>,
    /// Use the ascent-signed update for comparison runs.
    #[arg(long)]
    pub printed_update_sign: bool,
    /// Fit even when the graph fails the structural sanity tests.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Auto,
    Exact,
    Gibbs,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 22_000)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 2_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    #[value(name = "lr-mv")]
    LrMv,
    #[value(name = "w-lr-mv")]
    WLrMv,
    Dap,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub ilfs: PathBuf,
    #[arg(long)]
    pub outputs: PathBuf,
    /// Feature CSV; required by the dap method.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Simulation spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Bundle directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also emit Gaussian class-cluster features aligned with the outputs.
    #[arg(long)]
    pub features_out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 2.5)]
    pub separation: f64,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predictions as posterior JSON-lines.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold label names CSV.
    #[arg(long)]
    pub gold: PathBuf,
    /// Metrics JSON destination; stdout summary either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainEndArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub posteriors: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Gradient step; omit for an automatic feature-scaled choice.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Held-out features for test metrics.
    #[arg(long)]
    pub test_features: Option<PathBuf>,
    /// Held-out gold names for test metrics.
    #[arg(long)]
    pub test_gold: Option<PathBuf>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

/// Applies the `WISYNTH_THREADS` cap to the global worker pool. Call once.
pub fn configure_threads() {
    if let Ok(raw) = std::env::var("WISYNTH_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Runs one command, returning the process exit code.
pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Check(args) => cmd_check(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::TrainEnd(args) => cmd_train_end(args),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_graph(path: &Path) -> Result<LabelGraph> {
    io::decode_graph(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_ilfs(path: &Path) -> Result<Vec<IlfSpec>> {
    io::decode_ilfs(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_outputs(path: &Path, ilfs: &[IlfSpec]) -> Result<IlfOutputMatrix> {
    let outputs = io::decode_outputs_csv(&read(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    outputs.validate(ilfs)?;
    Ok(outputs)
}

fn report_structure(graph: &LabelGraph) -> (bool, String) {
    let consistency = graph.check_consistency();
    let distinct = graph.check_distinguishability();
    let mut text = String::new();
    if consistency.consistent {
        text.push_str("consistency: ok\n");
    } else {
        text.push_str(&format!(
            "consistency: FAILED ({} inconsistent triangles)\n",
            consistency.violations.len()
        ));
        for v in &consistency.violations {
            let names: Vec<&str> = v
                .labels
                .iter()
                .map(|&id| graph.label(id).unwrap().name.as_str())
                .collect();
            text.push_str(&format!(
                "  triangle ({}, {}, {}): relations ({}, {}, {})\n",
                names[0], names[1], names[2], v.relations[0], v.relations[1], v.relations[2]
            ));
        }
    }
    if distinct.distinguishable {
        text.push_str("distinguishability: ok\n");
    } else {
        text.push_str(&format!(
            "distinguishability: FAILED ({} indistinct pairs)\n",
            distinct.indistinct_pairs.len()
        ));
        for p in &distinct.indistinct_pairs {
            text.push_str(&format!(
                "  pair ({}, {}): identical relations toward every seen label; \
                 add one seen label that separates them\n",
                graph.label(p.pair.0).unwrap().name,
                graph.label(p.pair.1).unwrap().name
            ));
        }
    }
    (consistency.consistent && distinct.distinguishable, text)
}

fn cmd_check(args: &CheckArgs) -> Result<i32> {
    let graph = match (&args.graph, &args.dag) {
        (Some(path), None) => load_graph(path)?,
        (None, Some(path)) => io::decode_dag(&read(path)?)
            .with_context(|| format!("converting {}", path.display()))?,
        _ => bail!("pass exactly one of --graph or --dag"),
    };
    if let Some(out) = &args.emit_graph {
        write(out, &io::encode_graph(&graph))?;
    }
    let (ok, text) = report_structure(&graph);
    print!("{text}");
    if let Some(ilfs_path) = &args.ilfs {
        let ilfs = load_ilfs(ilfs_path)?;
        let outputs = match &args.outputs {
            Some(p) => Some(load_outputs(p, &ilfs)?),
            None => None,
        };
        let report = graph.check_informativeness(&ilfs, outputs.as_ref())?;
        for ilf in &report.per_ilf {
            let structural = if ilf.structurally_informative { "ok" } else { "UNINFORMATIVE" };
            let empirical = match ilf.empirically_informative {
                Some(true) => ", empirical ok",
                Some(false) => ", empirically UNINFORMATIVE",
                None => "",
            };
            println!("informativeness ilf {}: structural {structural}{empirical}", ilf.ilf_id);
        }
    }
    Ok(if ok { 0 } else { 1 })
}

fn cmd_fit(args: &FitArgs) -> Result<i32> {
    let graph = load_graph(&args.graph)?;
    let ilfs = load_ilfs(&args.ilfs)?;
    let outputs = load_outputs(&args.outputs, &ilfs)?;

    let (ok, text) = report_structure(&graph);
    if !ok {
        eprint!("{text}");
        if !args.force {
            bail!(
                "label graph failed the structural sanity tests; \
                 fix the graph or rerun with --force"
            );
        }
        eprintln!("continuing despite failed checks (--force)");
    }

    let options = BuildOptions {
        include_unknown: !args.no_unknown,
        include_pseudo_accuracy: !args.no_pseudo_accuracy,
    };
    let model = match args.kind {
        KindArg::Plrm => FactorModel::build_plrm(&graph, &ilfs, options)?,
        KindArg::Wslg => FactorModel::build_wslg(&graph, &ilfs)?,
    };
    let cfg = TrainConfig {
        step_size: args.step_size,
        epochs: args.epochs,
        burn_in: args.burn_in,
        chain_sweeps_per_update: args.chain_sweeps,
        positivity_floor: args.positivity_floor,
        theta_init: args.theta_init,
        seed: args.seed,
        accuracy_init: args.accuracy_init,
        printed_update_sign: args.printed_update_sign,
        ..TrainConfig::default()
    };
    let (trained, log) = training::fit(&model, &outputs, &cfg)?;
    eprintln!(
        "samplers: unconditional = {}; conditional = {}",
        log.unconditional_sampler, log.conditional_sampler
    );

    // content hashes refer to the canonical re-encoding of the inputs
    let graph_hash = io::sha256_hex(io::encode_graph(&graph).as_bytes());
    let ilfs_hash = io::sha256_hex(io::encode_ilfs(&ilfs).as_bytes());
    write(&args.out, &io::encode_model(&trained, &graph_hash, &ilfs_hash))?;
    if let Some(log_path) = &args.log {
        write(log_path, &io::encode_train_log(&log.epochs))?;
    }
    println!("model written to {}", args.out.display());
    Ok(0)
}

fn cmd_predict(args: &PredictArgs) -> Result<i32> {
    let decoded = io::decode_model(&read(&args.model)?)?;
    let model = decoded.model;
    let ilfs: Vec<IlfSpec> = model
        .ilf_domains()
        .iter()
        .map(|dom| IlfSpec {
            ilf_id: dom.ilf_id,
            output_space: dom.outputs.iter().map(|&p| model.seen_labels()[p].id).collect(),
            can_abstain: dom.can_abstain,
        })
        .collect();
    let outputs = load_outputs(&args.outputs, &ilfs)?;
    let method = match args.method {
        MethodArg::Auto => InferenceMethod::Auto,
        MethodArg::Exact => InferenceMethod::Exact,
        MethodArg::Gibbs => InferenceMethod::Gibbs,
    };
    let params = PosteriorParams {
        sweeps: args.sweeps,
        burn_in: args.burn_in,
        seed: args.seed,
        ..PosteriorParams::default()
    };
    let post = wisynth_core::posterior_labels(&model, &outputs, method, &params)?;
    write(&args.out, &io::encode_posteriors(&post))?;
    println!("posteriors written to {}", args.out.display());
    Ok(0)
}

fn cmd_baseline(args: &BaselineArgs) -> Result<i32> {
    let graph = load_graph(&args.graph)?;
    let ilfs = load_ilfs(&args.ilfs)?;
    let outputs = load_outputs(&args.outputs, &ilfs)?;
    let class_names: Vec<String> = graph
        .desired()
        .iter()
        .map(|&id| graph.label(id).unwrap().name.clone())
        .collect();

    let predictions: Vec<Option<usize>> = match args.method {
        BaselineMethod::LrMv | BaselineMethod::WLrMv => {
            let out = match args.method {
                BaselineMethod::LrMv => baselines::lr_mv(&graph, &outputs)?,
                _ => baselines::w_lr_mv(&graph, &outputs)?,
            };
            out.predictions
                .iter()
                .map(|p| p.map(|id| out.desired.iter().position(|&d| d == id).unwrap()))
                .collect()
        }
        BaselineMethod::Dap => {
            let features_path =
                args.features.as_ref().context("the dap baseline needs --features")?;
            let features = io::decode_features_csv(&read(features_path)?)?;
            let dap = baselines::dap_fit(&graph, &outputs, &features, &EndModelConfig::default())?;
            features
                .iter()
                .map(|x| {
                    let id = dap.predict(x);
                    Some(graph.desired().iter().position(|&d| d == id).unwrap())
                })
                .collect()
        }
    };
    let post = io::hard_to_posteriors(&class_names, &predictions, Provenance::Exact);
    write(&args.out, &io::encode_posteriors(&post))?;
    println!("predictions written to {}", args.out.display());
    Ok(0)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let mut spec: SimSpec = io::decode_sim_spec(&read(&args.spec)?)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let task = synthlab::generate_task(&spec)?;
    let gold_names: Vec<String> =
        task.gold.iter().map(|&id| task.graph.label(id).unwrap().name.clone()).collect();

    let dir = &args.out;
    fs::create_dir_all(dir)?;
    write(&dir.join("graph.json"), &io::encode_graph(&task.graph))?;
    write(&dir.join("ilfs.json"), &io::encode_ilfs(&task.ilfs))?;
    write(&dir.join("outputs.csv"), &io::encode_outputs_csv(&task.outputs))?;
    write(&dir.join("gold.csv"), &io::encode_gold_csv(&gold_names))?;
    write(&dir.join("spec.json"), &io::encode_sim_spec(&spec))?;
    if let Some(features_path) = &args.features_out {
        let features = synthlab::gaussian_features(
            &task.gold,
            task.graph.desired(),
            args.feature_dim,
            args.separation,
            spec.seed,
        );
        write(features_path, &io::encode_features_csv(&features))?;
    }
    println!("task bundle written to {}", dir.display());
    Ok(0)
}

/// Shared scoring path: posterior lines vs gold names.
fn score_predictions(pred_text: &str, gold_names: &[String]) -> Result<synthlab::Metrics> {
    let (classes, rows) = io::decode_posteriors(pred_text)?;
    if rows.len() != gold_names.len() {
        bail!("{} prediction rows vs {} gold rows", rows.len(), gold_names.len());
    }
    let mut class_names: Vec<String> =
        classes.iter().filter(|c| c.as_str() != "unknown").cloned().collect();
    for g in gold_names {
        if !class_names.contains(g) {
            class_names.push(g.clone());
        }
    }
    class_names.sort();
    let name_idx = |name: &str| class_names.iter().position(|c| c == name);

    let predictions: Vec<Option<LabelId>> = rows
        .iter()
        .map(|row| {
            let mut best: Option<usize> = None;
            for (i, &p) in row.iter().enumerate() {
                if p > 0.0 && best.map_or(true, |b| p > row[b]) {
                    best = Some(i);
                }
            }
            best.and_then(|i| {
                let name = &classes[i];
                if name == "unknown" {
                    None
                } else {
                    name_idx(name).map(LabelId)
                }
            })
        })
        .collect();
    let gold: Vec<LabelId> = gold_names
        .iter()
        .map(|g| LabelId(name_idx(g).expect("gold classes are included")))
        .collect();
    let class_ids: Vec<LabelId> = (0..class_names.len()).map(LabelId).collect();
    Ok(synthlab::evaluate(&predictions, &gold, &class_ids)?)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let gold = io::decode_gold_csv(&read(&args.gold)?)?;
    let metrics = score_predictions(&read(&args.pred)?, &gold)?;
    println!("accuracy: {:.4}", metrics.accuracy);
    println!("macro_f1: {:.4}", metrics.macro_f1);
    if let Some(out) = &args.out {
        write(out, &io::encode_metrics(&metrics))?;
    }
    Ok(0)
}

/// Restricts posterior rows to the named desired classes, renormalizing;
/// rows with no mass left become uniform.
fn desired_rows(classes: &[String], rows: &[Vec<f64>]) -> (Vec<String>, Vec<Vec<f64>>) {
    let keep: Vec<usize> = classes
        .iter()
        .enumerate()
        .filter(|(_, c)| c.as_str() != "unknown")
        .map(|(i, _)| i)
        .collect();
    let names: Vec<String> = keep.iter().map(|&i| classes[i].clone()).collect();
    let rows = rows
        .iter()
        .map(|row| {
            let mut out: Vec<f64> = keep.iter().map(|&i| row[i]).collect();
            let total: f64 = out.iter().sum();
            if total > 0.0 {
                for v in out.iter_mut() {
                    *v /= total;
                }
            } else {
                let u = 1.0 / out.len() as f64;
                out.iter_mut().for_each(|v| *v = u);
            }
            out
        })
        .collect();
    (names, rows)
}

fn cmd_train_end(args: &TrainEndArgs) -> Result<i32> {
    let features = io::decode_features_csv(&read(&args.features)?)?;
    let (classes, rows) = io::decode_posteriors(&read(&args.posteriors)?)?;
    let (class_names, posteriors) = desired_rows(&classes, &rows);
    let cfg = EndModelConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        weight_decay: args.weight_decay,
    };
    let model = baselines::train_noise_aware_linear(&features, &posteriors, &cfg)?;
    write(
        &args.out,
        &io::encode_linear_model(&io::LinearModelFile {
            classes: class_names.clone(),
            model: model.clone(),
        }),
    )?;
    println!("end model written to {}", args.out.display());

    if let (Some(tf), Some(tg)) = (&args.test_features, &args.test_gold) {
        let test_features = io::decode_features_csv(&read(tf)?)?;
        let test_gold = io::decode_gold_csv(&read(tg)?)?;
        if test_features.len() != test_gold.len() {
            bail!("test features and gold lengths differ");
        }
        let predictions: Vec<Option<usize>> =
            test_features.iter().map(|x| Some(model.predict(x))).collect();
        let post = io::hard_to_posteriors(&class_names, &predictions, Provenance::Exact);
        let metrics = score_predictions(&io::encode_posteriors(&post), &test_gold)?;
        println!("test accuracy: {:.4}", metrics.accuracy);
        println!("test macro_f1: {:.4}", metrics.macro_f1);
        if let Some(mo) = &args.metrics_out {
            write(mo, &io::encode_metrics(&metrics))?;
        }
    }
    Ok(0)
}

/// Posterior labels for a model and outputs with default parameters;
/// exposed for tests that compare library and CLI paths.
pub fn posterior_for(
    model: &FactorModel,
    outputs: &IlfOutputMatrix,
    seed: u64,
) -> Result<PosteriorLabels> {
    let params = PosteriorParams { seed, ..PosteriorParams::default() };
    Ok(wisynth_core::posterior_labels(model, outputs, InferenceMethod::Auto, &params)?)
}
