//! `kcot` command-line front end.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use kcot_core::attention::verification_sweep;
use kcot_core::encoder::{
    normalize_adjacency, pretrain_link_contrastive, GcnWeights, PretrainConfig,
};
use kcot_core::graph::{load_dataset, save_dataset, synth_sbm_tag, SbmConfig, TagGraph};
use kcot_core::metrics::{to_json_17, RunReport};
use kcot_core::pipeline::{
    evaluate_trained, train_downstream, Head, PipelineConfig, PipelineContext, Task, TrainHistory,
};
use kcot_core::thoughts::{embed_texts, GeneratorMode, ThoughtCache, ThoughtEngine, DEFAULT_TEXT_DIM};
use kcot_core::condnet::CondNetWeights;
use kcot_core::{DenseMatrix, KcotError};

const EQUIVALENCE_TOL: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "kcot", version, about = "Clustering-as-reasoning on text-attributed graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that the constructed attention layer reproduces soft k-means
    /// assignments on random instances.
    VerifyAttn(VerifyArgs),
    /// Write a synthetic stochastic-block-model dataset.
    Synth(SynthArgs),
    /// Pretrain the GCN encoder with the link contrastive objective.
    Pretrain(PretrainArgs),
    /// Run iterative reasoning and downstream training; writes a run directory.
    Run(RunArgs),
    /// Recompute the metrics of an existing run from its saved weights.
    Eval(EvalArgs),
    /// Print a run report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    nodes_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output file for the encoder weights.
    #[arg(long)]
    weights: PathBuf,
    /// JSON file with pretraining settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Width of hashed text features when the dataset has none.
    #[arg(long, default_value_t = DEFAULT_TEXT_DIM)]
    text_dim: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GeneratorArg {
    Mock,
    Remote,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    NodeClassification,
    LinkPrediction,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    /// Pretrained encoder weights.
    #[arg(long)]
    weights: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with pipeline settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    generator: Option<GeneratorArg>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory written by `run`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directory or report file.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] KcotError),
    #[error("assignment equivalence violated: max_diff={0:e} exceeds {EQUIVALENCE_TOL:e}")]
    Verification(f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Verification(_) => "verification_failed",
            CliError::Io { .. } => "io",
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn stdout_json(value: &Value) -> CliResult<()> {
    let bytes = to_json_17(value)
        .map_err(|e| CliError::Io { path: "<stdout>".into(), source: io::Error::other(e) })?;
    let mut out = io::stdout().lock();
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Io { path: "<stdout>".into(), source: e })
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable value")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| KcotError::Io { path: path.into(), source: e })?;
    Ok(serde_json::from_str(&text).map_err(|e| KcotError::Json { path: path.into(), source: e })?)
}

fn features_for(g: &TagGraph, text_dim: usize) -> CliResult<DenseMatrix> {
    Ok(match g.features() {
        Some(f) => f.clone(),
        None => embed_texts(g.texts(), text_dim)?,
    })
}

fn verify_attn(a: VerifyArgs) -> CliResult<()> {
    let trials = verification_sweep(a.trials, a.seed)?;
    let max_diff = trials.iter().map(|t| t.max_diff).fold(0.0, f64::max);
    if a.json {
        stdout_json(&json!({ "trials": to_value(&trials), "max_diff": max_diff }))?;
    } else {
        for t in &trials {
            println!(
                "trial={} n={} k={} d={} tau={} max_diff={:e}",
                t.trial, t.n, t.k, t.d, t.tau, t.max_diff
            );
        }
        println!("max_diff={max_diff:e}");
    }
    if max_diff > EQUIVALENCE_TOL {
        return Err(CliError::Verification(max_diff));
    }
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let cfg = SbmConfig {
        nodes_per_class: a.nodes_per_class,
        classes: a.classes,
        p_in: a.p_in,
        p_out: a.p_out,
        seed: a.seed,
        ..SbmConfig::default()
    };
    let g = synth_sbm_tag(&cfg)?;
    save_dataset(&g, &a.out)?;
    let summary = json!({
        "out": a.out.display().to_string(),
        "nodes": g.node_count(),
        "edges": g.edge_count(),
        "classes": g.class_count(),
        "homophily": g.homophily(),
    });
    if a.json {
        stdout_json(&summary)?;
    } else {
        println!(
            "wrote {} nodes, {} edges, {} classes to {}",
            g.node_count(),
            g.edge_count(),
            g.class_count(),
            a.out.display()
        );
    }
    Ok(())
}

fn pretrain(a: PretrainArgs) -> CliResult<()> {
    let mut cfg: PretrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PretrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let (g, _) = load_dataset(&a.data)?;
    let x = features_for(&g, a.text_dim)?;
    let adj = normalize_adjacency(&g);
    let outcome = pretrain_link_contrastive(&g, &x, &adj, &cfg)?;
    if let Some(parent) = a.weights.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Io { path: parent.into(), source: e })?;
    }
    outcome.weights.save(&a.weights)?;
    let first = outcome.loss_curve.first().copied();
    let last = outcome.loss_curve.last().copied();
    if a.json {
        stdout_json(&json!({
            "weights": a.weights.display().to_string(),
            "epochs": outcome.loss_curve.len(),
            "initial_loss": first,
            "final_loss": last,
            "loss_curve": outcome.loss_curve,
        }))?;
    } else {
        println!(
            "pretrained {} epochs, loss {} -> {}; weights at {}",
            outcome.loss_curve.len(),
            first.unwrap_or(f64::NAN),
            last.unwrap_or(f64::NAN),
            a.weights.display()
        );
    }
    Ok(())
}

fn engine_for(cfg: &PipelineConfig, run_dir: &Path) -> CliResult<ThoughtEngine> {
    let engine = ThoughtEngine::from_config(&cfg.generator)?;
    if cfg.generator.mode == GeneratorMode::Remote && cfg.generator.cache_dir.is_none() {
        let cache = ThoughtCache::open(run_dir.join("thoughts"))?;
        return Ok(engine.with_cache(Some(cache)));
    }
    Ok(engine)
}

fn run(a: RunArgs) -> CliResult<()> {
    let encoder = GcnWeights::load(&a.weights)?;
    let mut cfg: PipelineConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(gen) = a.generator {
        cfg.generator.mode = match gen {
            GeneratorArg::Mock => GeneratorMode::Mock,
            GeneratorArg::Remote => GeneratorMode::Remote,
        };
    }
    if let Some(t) = a.task {
        cfg.task = match t {
            TaskArg::NodeClassification => Task::NodeClassification,
            TaskArg::LinkPrediction => Task::LinkPrediction,
        };
    }
    cfg.validate()?;
    let (g, _) = load_dataset(&a.data)?;
    let engine = engine_for(&cfg, &a.out)?;
    let artifacts = train_downstream(&g, &encoder, &engine, &cfg)?;
    artifacts.write_to(&a.out)?;
    if a.json {
        stdout_json(&to_value(&artifacts.report))?;
    } else {
        print_report(&artifacts.report);
        println!("run directory: {}", a.out.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let report_path = a.run.join("report.json");
    let stored = RunReport::load(&report_path)?;
    let cfg: PipelineConfig = serde_json::from_value(stored.config.clone())
        .map_err(|e| KcotError::Json { path: report_path.clone(), source: e })?;
    let encoder = GcnWeights::load(&a.weights)?;
    let phi = CondNetWeights::load(&a.run.join("condnet.json"))?;
    let head = Head::load(&a.run.join("head.json"))?;
    let (g, _) = load_dataset(&a.data)?;
    let engine = engine_for(&cfg, &a.run)?;
    let ctx = PipelineContext::new(&g, &encoder, &engine, &cfg)?;
    let history = TrainHistory {
        inter_intra: stored.inter_intra.clone(),
        epochs_run: stored.diagnostics.epochs_run,
        best_epoch: stored.diagnostics.best_epoch,
    };
    let (inference, report) = evaluate_trained(&ctx, &phi, &head, history)?;
    let stored_answer = fs::read(a.run.join("answer_matrix.bin")).ok();
    let answer_matches = stored_answer.as_deref() == Some(&inference.answer.to_le_bytes()[..]);
    let report_matches = to_value(&report) == to_value(&stored);
    if a.json {
        stdout_json(&json!({
            "report": to_value(&report),
            "matches_run": report_matches && answer_matches,
        }))?;
    } else {
        print_report(&report);
        println!("matches_run={}", report_matches && answer_matches);
    }
    Ok(())
}

fn report(a: ReportArgs) -> CliResult<()> {
    let path = if a.run.is_dir() { a.run.join("report.json") } else { a.run.clone() };
    let r = RunReport::load(&path)?;
    if a.json {
        stdout_json(&to_value(&r))?;
    } else {
        print_report(&r);
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

fn print_report(r: &RunReport) {
    let deltas: Vec<String> = r.delta.iter().map(|d| format!("{d:.6}")).collect();
    println!("delta per step : [{}]", deltas.join(", "));
    println!("rho_hat        : {}", opt(r.rho_hat));
    println!("eps_hat        : {}", opt(r.eps_hat));
    println!("fit residual   : {}", opt(r.residual));
    println!(
        "accuracy       : train {}  val {}  test {}",
        opt(r.accuracy.train),
        opt(r.accuracy.val),
        opt(r.accuracy.test)
    );
    println!(
        "inter/intra    : {} epochs, last {}",
        r.inter_intra.len(),
        opt(r.inter_intra.last().copied())
    );
    println!("kappa_hat      : {}", opt(r.kappa_hat));
    println!("lambda_hat     : {}", opt(r.lambda_hat));
    let d = &r.diagnostics;
    println!(
        "epochs         : {} run, best at {}",
        d.epochs_run, d.best_epoch
    );
    println!(
        "separation     : features {} -> answer {}",
        opt(d.inter_intra_features),
        opt(d.inter_intra_answer)
    );
    if d.non_contractive == Some(true) {
        println!("warning        : fitted recursion is non-contractive (rho_hat >= 1)");
    }
    for n in &d.notes {
        println!("note           : {n}");
    }
    println!("seed           : {} ({})", r.seeds.run, r.seeds.rng_algorithm);
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let msg = first.trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": msg }));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::VerifyAttn(a) => verify_attn(a),
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
