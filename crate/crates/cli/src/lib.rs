//! `probattn` command-line interface.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage error, 3 data or
//! validation error.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use probattn::bp::{BpConfig, CorrectionSet};
use probattn::format::{
    self, AdaptOutput, BpOutput, InferOutput, LabelsDocument, LoadedModel, FORMAT_VERSION,
};
use probattn::oracle::{synth_scene, SynthSpec};
use probattn::{adapt, batch_infer, propagate, suite, AdaptConfig, EmConfig, HyperPriors, WeightMode};
use probattn_annotation_service::session::SessionSource;
use probattn_annotation_service::AppState;

pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "probattn", version, about = "Probabilistic attention: value inference, key adaptation, belief propagation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MAP value inference for every unit
    Infer(InferArgs),
    /// Adapt keys (and optionally query precisions) to a batch of queries
    AdaptKeys(AdaptArgs),
    /// Propagate value corrections and re-infer the remaining units
    Bp(BpArgs),
    /// Run the seeded invariant suite
    Check(CheckArgs),
    /// Write a synthetic annotation scene
    Synth(SynthArgs),
    /// Start the annotation HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// derived or paper-literal
    #[arg(long, default_value = "derived")]
    pub mode: WeightMode,
    /// Extra seeded starts per unit; the best final density wins
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub theta_xi: f64,
    #[arg(long)]
    pub adapt_alpha: bool,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Write the adapted model here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub corrections: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub sweeps: usize,
    /// Use the query dimension in the precision update
    #[arg(long)]
    pub literal_beta_dim: bool,
    /// Write the adapted model here
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub clusters: usize,
    #[arg(long)]
    pub noise: f64,
    /// Files are written as PREFIX.model.json, PREFIX.queries.json,
    /// PREFIX.corrections.json and PREFIX.labels.json
    #[arg(long)]
    pub out_prefix: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Queries for sessions created from the served model; defaults to its keys
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Persist sessions here and restore them at startup
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Data(String),
    CheckFailed(String),
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn with_path(path: &Path) -> impl Fn(format::FormatError) -> CliError + '_ {
    move |e| match e {
        format::FormatError::Io { .. } => CliError::Data(e.to_string()),
        _ => CliError::Data(format!("{}: {e}", path.display())),
    }
}

fn load_model(path: &Path) -> Result<LoadedModel, CliError> {
    format::load_model(path).map_err(with_path(path))
}

fn load_queries(path: &Path, model: &LoadedModel) -> Result<Vec<Vec<f64>>, CliError> {
    let text = format::read_text(path).map_err(with_path(path))?;
    format::parse_queries(&text, model.params.n(), model.params.d()).map_err(with_path(path))
}

/// Parses `args` (program name first), runs the command and writes its
/// standard output document to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            if out.write_all(text.as_bytes()).is_err() {
                return EXIT_DATA;
            }
            0
        }
        Err(CliError::CheckFailed(text)) => {
            let _ = out.write_all(text.as_bytes());
            let _ = writeln!(err, "error: invariant suite failed");
            EXIT_CHECK
        }
        Err(CliError::Data(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_DATA
        }
    }
}

pub fn execute(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Infer(a) => infer(&a),
        Command::AdaptKeys(a) => adapt_keys(&a),
        Command::Bp(a) => bp(&a),
        Command::Check(a) => check(&a),
        Command::Synth(a) => synth(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn infer(a: &InferArgs) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let queries = load_queries(&a.queries, &model)?;
    let cfg = EmConfig {
        max_iter: a.max_iter,
        tol: a.tol,
        mode: a.mode,
        restarts: a.restarts,
        seed: a.seed,
    };
    let results = batch_infer(&model.params, &queries, &cfg)
        .map_err(data)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Data(format!("unit {i}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(format::to_text(&InferOutput::new(a.mode, results, a.trace)))
}

fn adapt_keys(a: &AdaptArgs) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let queries = load_queries(&a.queries, &model)?;
    let hyper = HyperPriors {
        theta_xi: a.theta_xi,
        ..model
            .hyper
            .clone()
            .unwrap_or_else(|| HyperPriors::weak(model.params.n()))
    };
    let cfg = AdaptConfig {
        iters: a.iters,
        hyper,
        adapt_alpha: a.adapt_alpha,
    };
    let res = adapt(&model.params, &queries, &cfg).map_err(data)?;
    let adapted = LoadedModel {
        params: res.params,
        ..model
    };
    if let Some(path) = &a.out {
        format::save_model(&adapted, path).map_err(with_path(path))?;
    }
    Ok(format::to_text(&AdaptOutput {
        version: FORMAT_VERSION,
        model: adapted.to_document(),
        objective: res.objective,
        warnings: res.warnings,
    }))
}

fn bp(a: &BpArgs) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let queries = load_queries(&a.queries, &model)?;
    let text = format::read_text(&a.corrections).map_err(with_path(&a.corrections))?;
    let corrections = format::parse_corrections(&text).map_err(with_path(&a.corrections))?;
    let cs = CorrectionSet::new(queries, corrections);
    let hyper = model
        .hyper
        .clone()
        .unwrap_or_else(|| HyperPriors::weak(model.params.n()));
    let cfg = BpConfig {
        sweeps: a.sweeps,
        literal_beta_dim: a.literal_beta_dim,
        ..BpConfig::default()
    };
    let res = propagate(&model.params, &cs, &hyper, &cfg).map_err(data)?;
    let labels = res.values.iter().map(|v| model.label_of(v)).collect();
    let adapted = LoadedModel {
        params: res.params,
        ..model
    };
    format::save_model(&adapted, &a.out).map_err(with_path(&a.out))?;
    Ok(format::to_text(&BpOutput {
        version: FORMAT_VERSION,
        values: res.values,
        labels,
        audit: res.audit,
    }))
}

fn check(a: &CheckArgs) -> Result<String, CliError> {
    let report = suite::run(a.seeds);
    let text = format::to_text(&report);
    if report.passed() {
        Ok(text)
    } else {
        Err(CliError::CheckFailed(text))
    }
}

/// Paths written by `synth` for a prefix.
pub fn synth_paths(prefix: &str) -> [PathBuf; 4] {
    ["model", "queries", "corrections", "labels"].map(|k| PathBuf::from(format!("{prefix}.{k}.json")))
}

fn synth(a: &SynthArgs) -> Result<String, CliError> {
    let spec = SynthSpec {
        seed: a.seed,
        n: a.n,
        clusters: a.clusters,
        noise: a.noise,
    };
    let scene = synth_scene(&spec).map_err(data)?;
    let model = LoadedModel {
        params: scene.params,
        hyper: Some(scene.hyper),
        prototypes: Some(scene.prototypes),
    };
    let [mp, qp, cp, lp] = synth_paths(&a.out_prefix);
    let docs = [
        (&mp, format::model_to_text(&model)),
        (&qp, format::queries_to_text(&scene.corrections.queries)),
        (&cp, format::corrections_to_text(&scene.corrections.corrected)),
        (
            &lp,
            format::to_text(&LabelsDocument {
                version: FORMAT_VERSION,
                labels: scene.labels,
            }),
        ),
    ];
    for (path, text) in &docs {
        format::write_text(path, text).map_err(with_path(path))?;
    }
    Ok(docs.iter().map(|(p, _)| format!("{}\n", p.display())).collect())
}

fn serve(a: &ServeArgs) -> Result<String, CliError> {
    let model = load_model(&a.model)?;
    let queries = a.queries.as_deref().map(|p| load_queries(p, &model)).transpose()?;
    let source = SessionSource::new(model, queries, None).map_err(data)?;
    if let Some(dir) = &a.snapshot_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    let state = AppState::new(Some(source), a.snapshot_dir.clone());
    let restored = state.load_snapshots().map_err(CliError::Data)?;
    let addr = SocketAddr::new(a.host, a.port);
    eprintln!("listening on http://{addr} ({restored} sessions restored)");
    let rt = tokio::runtime::Runtime::new().map_err(data)?;
    rt.block_on(probattn_annotation_service::serve(addr, Arc::new(state)))
        .map_err(|e| CliError::Data(format!("{addr}: {e}")))?;
    Ok(String::new())
}
