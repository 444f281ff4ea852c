//! `mdbg`: one command-line entry point for the whole pipeline — ingest,
//! discretize, build, diffuse, query, export, forecast — plus a `selftest`
//! command that runs the library's oracle suites.
//!
//! Conventions shared by every subcommand:
//! - results go to stdout; logs are line-delimited JSON on stderr;
//! - an optional JSON config file (`--config`) mirrors the flags, and any
//!   explicitly passed flag overrides its value;
//! - exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//!   non-convergence;
//! - `MDBG_THREADS` caps internal parallelism.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Deserialize;
use serde_json::json;

use mdbg_core::diffusion::{
    diffuse_topk, DiffusionConfig, DiffusionError, Normalization, TransitionMatrix,
};
use mdbg_core::discretize::{Discretizer, Strategy};
use mdbg_core::export::{self, LoadedArchive, Provenance};
use mdbg_core::forecast::{self, Fallback, ForecastConfig, ForecastError, ForecastMode};
use mdbg_core::graph::Mdbg;
use mdbg_core::ingest::{self, SplitSpec, TimeSeriesDataset};
use mdbg_core::query::{self, QueryWindow, SampleConfig};
use mdbg_core::selftest;

// ---------------------------------------------------------------------------
// Errors and exit codes

#[derive(Debug)]
enum CliError {
    /// Bad flags, bad config, contradictory parameters. Exit 1.
    Usage(String),
    /// The inputs could not be read, parsed, or validated. Exit 2.
    Data(String),
    /// Diffusion failed to converge within its iteration budget. Exit 3.
    NoConvergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NoConvergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NoConvergence(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

impl From<ingest::IngestError> for CliError {
    fn from(e: ingest::IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<mdbg_core::discretize::DiscretizeError> for CliError {
    fn from(e: mdbg_core::discretize::DiscretizeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<mdbg_core::graph::GraphError> for CliError {
    fn from(e: mdbg_core::graph::GraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<mdbg_core::query::QueryError> for CliError {
    fn from(e: mdbg_core::query::QueryError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<mdbg_core::export::ExportError> for CliError {
    fn from(e: mdbg_core::export::ExportError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::NoConvergence { .. } => CliError::NoConvergence(e.to_string()),
            DiffusionError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            DiffusionError::EmptyGraph => CliError::Data(e.to_string()),
        }
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::InvalidHorizon => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Command line definition

#[derive(Parser)]
#[command(
    name = "mdbg",
    version,
    about = "Multivariate de Bruijn graphs over discretized time series"
)]
struct Cli {
    /// JSON config file mirroring the flags; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Also emit debug-level logs.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a CSV and optionally write chronological train/val/test splits.
    Ingest(IngestArgs),
    /// Build a graph archive from a CSV.
    Build(BuildArgs),
    /// Print structural statistics of an existing archive.
    Stats(StatsArgs),
    /// Run PPR diffusion over an archive and store the top-k result.
    Diffuse(DiffuseArgs),
    /// Resolve one query window to a node mask (optionally with samples).
    Query(QueryArgs),
    /// Resolve a batch of fixed-length windows and write mask records.
    Export(ExportArgs),
    /// Forecast with the symbolic frequency baseline.
    Forecast(ForecastArgs),
    /// Run the built-in oracle suites; exit 0 only if every check passes.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input CSV (header row; one column per dimension).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Treat the first column as a timestamp, not a value.
    #[arg(long)]
    timestamp_column: bool,
    /// End of the training span (steps).
    #[arg(long)]
    train_end: Option<usize>,
    /// End of the validation span (steps).
    #[arg(long)]
    val_end: Option<usize>,
    /// Steps of training context prepended to validation/test splits.
    #[arg(long)]
    overlap: Option<usize>,
    /// Directory for split CSVs (train.csv, val.csv, test.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    /// Input CSV (header row; one column per dimension).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Treat the first column as a timestamp, not a value.
    #[arg(long)]
    timestamp_column: bool,
    /// Tuple order k.
    #[arg(long)]
    k: Option<usize>,
    /// Shared alphabet size for every dimension.
    #[arg(long)]
    alpha: Option<u16>,
    /// Per-dimension alphabet sizes (comma separated), overriding --alpha.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<u16>>,
    /// Discretization strategy: uniform | quantile.
    #[arg(long)]
    strategy: Option<String>,
    /// Build from the first N steps only (defaults to the whole series).
    #[arg(long)]
    train_end: Option<usize>,
    /// Archive output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Archive directory written by `build`.
    #[arg(long)]
    archive: PathBuf,
}

#[derive(Args)]
struct DiffuseArgs {
    /// Archive directory written by `build`.
    #[arg(long)]
    archive: PathBuf,
    /// Teleport (restart) probability in (0, 1].
    #[arg(long)]
    teleport: Option<f64>,
    /// Entries kept per row after sparsification.
    #[arg(long)]
    top_k: Option<usize>,
    /// L-infinity convergence tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Power-iteration budget.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Transition normalization: row | symmetric.
    #[arg(long)]
    normalization: Option<String>,
    /// Rescale each kept row to sum to 1.
    #[arg(long)]
    renormalize: bool,
    /// Output directory (defaults to updating the archive in place).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Archive directory written by `build`.
    #[arg(long)]
    archive: PathBuf,
    /// Window CSV with the same columns as the build input.
    #[arg(long)]
    window: Option<PathBuf>,
    /// Treat the first column as a timestamp, not a value.
    #[arg(long)]
    timestamp_column: bool,
    /// Attach feature samples for every masked node.
    #[arg(long)]
    sample: bool,
    /// Samples per node.
    #[arg(long)]
    f: Option<usize>,
    /// Sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the mask record to this JSONL file instead of stdout only.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Archive directory written by `build`.
    #[arg(long)]
    archive: PathBuf,
    /// CSV of stacked windows (length must divide into --window-len rows).
    #[arg(long)]
    windows: Option<PathBuf>,
    /// Steps per window.
    #[arg(long)]
    window_len: Option<usize>,
    /// Treat the first column as a timestamp, not a value.
    #[arg(long)]
    timestamp_column: bool,
    /// Output JSONL path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    /// Archive directory written by `build`.
    #[arg(long)]
    archive: PathBuf,
    /// Window CSV with the same columns as the build input.
    #[arg(long)]
    window: Option<PathBuf>,
    /// Treat the first column as a timestamp, not a value.
    #[arg(long)]
    timestamp_column: bool,
    /// Steps to predict.
    #[arg(long)]
    horizon: Option<usize>,
    /// Prediction mode: greedy | expected.
    #[arg(long)]
    mode: Option<String>,
    /// Sink fallback: nearest-node | repeat-last.
    #[arg(long)]
    fallback: Option<String>,
    /// Ground-truth CSV; adds MSE/MAE to the output.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write predictions CSV here (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Run reduced-scale checks.
    #[arg(long)]
    quick: bool,
}

// ---------------------------------------------------------------------------
// Config file: same knobs as the flags; flags override.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    timestamp_column: Option<bool>,
    k: Option<usize>,
    alpha: Option<u16>,
    alphas: Option<Vec<u16>>,
    strategy: Option<Strategy>,
    train_end: Option<usize>,
    val_end: Option<usize>,
    overlap: Option<usize>,
    teleport: Option<f64>,
    top_k: Option<usize>,
    tolerance: Option<f64>,
    max_iterations: Option<usize>,
    normalization: Option<Normalization>,
    renormalize: Option<bool>,
    horizon: Option<usize>,
    mode: Option<ForecastMode>,
    fallback: Option<Fallback>,
    f: Option<usize>,
    seed: Option<u64>,
    window_len: Option<usize>,
    out: Option<PathBuf>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> CliResult<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

fn parse_strategy(flag: Option<&str>, file: Option<Strategy>) -> CliResult<Strategy> {
    match flag {
        Some("uniform") => Ok(Strategy::Uniform),
        Some("quantile") => Ok(Strategy::Quantile),
        Some(other) => Err(CliError::Usage(format!(
            "unknown strategy {other:?} (expected uniform or quantile)"
        ))),
        None => Ok(file.unwrap_or(Strategy::Uniform)),
    }
}

fn parse_normalization(flag: Option<&str>, file: Option<Normalization>) -> CliResult<Normalization> {
    match flag {
        Some("row") => Ok(Normalization::Row),
        Some("symmetric") => Ok(Normalization::Symmetric),
        Some(other) => Err(CliError::Usage(format!(
            "unknown normalization {other:?} (expected row or symmetric)"
        ))),
        None => Ok(file.unwrap_or_default()),
    }
}

fn parse_mode(flag: Option<&str>, file: Option<ForecastMode>) -> CliResult<ForecastMode> {
    match flag {
        Some("greedy") => Ok(ForecastMode::Greedy),
        Some("expected") => Ok(ForecastMode::Expected),
        Some(other) => Err(CliError::Usage(format!(
            "unknown mode {other:?} (expected greedy or expected)"
        ))),
        None => Ok(file.unwrap_or_default()),
    }
}

fn parse_fallback(flag: Option<&str>, file: Option<Fallback>) -> CliResult<Fallback> {
    match flag {
        Some("nearest-node") => Ok(Fallback::NearestNode),
        Some("repeat-last") => Ok(Fallback::RepeatLast),
        Some(other) => Err(CliError::Usage(format!(
            "unknown fallback {other:?} (expected nearest-node or repeat-last)"
        ))),
        None => Ok(file.unwrap_or_default()),
    }
}

// ---------------------------------------------------------------------------
// Structured logging

struct JsonLogger {
    level: log::LevelFilter,
}

impl log::Log for JsonLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let line = json!({
            "ts": (ts * 1000.0).round() / 1000.0,
            "level": record.level().as_str().to_ascii_lowercase(),
            "target": record.target(),
            "msg": record.args().to_string(),
        });
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    }

    fn flush(&self) {}
}

fn init_logging(verbose: bool) {
    let level = if verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    let _ = log::set_boxed_logger(Box::new(JsonLogger { level }));
    log::set_max_level(level);
}

fn init_threads() {
    let Ok(raw) = std::env::var("MDBG_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .is_ok()
            {
                info!("limiting internal parallelism to {n} threads");
            }
        }
        _ => warn!("ignoring MDBG_THREADS={raw:?}: expected a positive integer"),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("{flag} is required (flag or config file)")))
}

fn load_archive(dir: &Path) -> CliResult<LoadedArchive> {
    let archive = export::load(dir)?;
    info!(
        "loaded archive {} ({} nodes, k={})",
        dir.display(),
        archive.graph.node_count(),
        archive.graph.k()
    );
    Ok(archive)
}

fn require_discretizer(archive: &LoadedArchive) -> CliResult<&Discretizer> {
    archive.discretizer.as_ref().ok_or_else(|| {
        CliError::Data(
            "this archive stores no discretizer table, so raw windows cannot be interpreted"
                .into(),
        )
    })
}

fn load_window(
    path: &Path,
    timestamp_column: bool,
    disc: &Discretizer,
) -> CliResult<(QueryWindow, Vec<String>)> {
    let ds = ingest::load_csv(path, timestamp_column)?;
    let names = ds.dim_names.clone();
    let window = QueryWindow::from_raw(ds.values, disc)?;
    Ok((window, names))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_ingest(args: IngestArgs, file: FileConfig) -> CliResult<()> {
    let input = require(args.input.or(file.input), "--input")?;
    let timestamp_column = args.timestamp_column || file.timestamp_column.unwrap_or(false);
    let ds = ingest::load_csv(&input, timestamp_column)?;
    let digest = export::file_digest(&input)?;
    info!("ingested {} ({} dims, {} steps)", input.display(), ds.dims(), ds.len());

    let train_end = args.train_end.or(file.train_end);
    let val_end = args.val_end.or(file.val_end);
    let mut splits = serde_json::Value::Null;
    if let (Some(train_end), Some(val_end)) = (train_end, val_end) {
        let overlap = args.overlap.or(file.overlap).unwrap_or(12);
        let spec = SplitSpec::new(train_end, val_end, overlap);
        let (train, val, test) = ingest::split(&ds, &spec)?;
        splits = json!({
            "train_steps": train.len(),
            "val_steps": val.len(),
            "test_steps": test.len(),
            "overlap": overlap,
        });
        if let Some(out) = args.out.or(file.out) {
            std::fs::create_dir_all(&out)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
            ingest::write_csv(&train, &out.join("train.csv"))?;
            ingest::write_csv(&val, &out.join("val.csv"))?;
            ingest::write_csv(&test, &out.join("test.csv"))?;
            info!("wrote splits under {}", out.display());
        }
    } else if train_end.is_some() || val_end.is_some() {
        return Err(CliError::Usage(
            "splitting needs both --train-end and --val-end".into(),
        ));
    }

    print_json(&json!({
        "input": input,
        "sha256": digest,
        "dimensions": ds.dim_names,
        "steps": ds.len(),
        "splits": splits,
    }));
    Ok(())
}

fn cmd_build(args: BuildArgs, file: FileConfig) -> CliResult<()> {
    let input = require(args.input.or(file.input), "--input")?;
    let out = require(args.out.or(file.out), "--out")?;
    let timestamp_column = args.timestamp_column || file.timestamp_column.unwrap_or(false);
    let k = args.k.or(file.k).unwrap_or(4);
    let strategy = parse_strategy(args.strategy.as_deref(), file.strategy)?;

    let ds = ingest::load_csv(&input, timestamp_column)?;
    let digest = export::file_digest(&input)?;
    let train = match args.train_end.or(file.train_end) {
        None => ds.clone(),
        Some(end) => {
            if end == 0 || end > ds.len() {
                return Err(CliError::Data(format!(
                    "--train-end {end} outside 1..={}",
                    ds.len()
                )));
            }
            ds.slice_cols(0, end)
        }
    };

    let alphas: Vec<u16> = match args.alphas.or_else(|| file.alphas.clone()) {
        Some(list) => {
            if list.len() != train.dims() {
                return Err(CliError::Usage(format!(
                    "--alphas lists {} sizes for {} dimensions",
                    list.len(),
                    train.dims()
                )));
            }
            list
        }
        None => vec![args.alpha.or(file.alpha).unwrap_or(20); train.dims()],
    };

    let disc = match strategy {
        Strategy::Uniform => Discretizer::fit_uniform(&train, &alphas)?,
        Strategy::Quantile => Discretizer::fit_quantile(&train, &alphas)?,
    };
    let discrete = disc.apply(&train)?;
    let g = Mdbg::build(&train, &discrete, k)?;
    let stats = g.stats();
    info!(
        "built graph: {} nodes, {} sequential edges, {} hyper pairs",
        stats.nodes, stats.seq_edges, stats.hyper_edges_undirected
    );

    let provenance = Provenance {
        input_digest: Some(digest),
        parameters: json!({
            "subcommand": "build",
            "input": input,
            "timestamp_column": timestamp_column,
            "k": k,
            "alphas": alphas,
            "strategy": strategy,
            "train_end": args.train_end.or(file.train_end),
        }),
    };
    let manifest = export::save(&g, None, Some(&disc), &provenance, &out)?;
    info!("archive written to {}", out.display());

    print_json(&json!({
        "archive": out,
        "manifest": manifest,
        "stats": stats,
    }));
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> CliResult<()> {
    let archive = load_archive(&args.archive)?;
    print_json(&json!({
        "archive": args.archive,
        "stats": archive.graph.stats(),
        "diffusion": archive.manifest.diffusion,
        "provenance": archive.manifest.provenance,
    }));
    Ok(())
}

fn cmd_diffuse(args: DiffuseArgs, file: FileConfig) -> CliResult<()> {
    let archive = load_archive(&args.archive)?;
    let normalization = parse_normalization(args.normalization.as_deref(), file.normalization)?;
    let cfg = DiffusionConfig {
        teleport: args.teleport.or(file.teleport).unwrap_or(0.15),
        top_k: args.top_k.or(file.top_k).unwrap_or(32),
        normalization,
        tolerance: args.tolerance.or(file.tolerance).unwrap_or(1e-9),
        max_iterations: args.max_iterations.or(file.max_iterations).unwrap_or(10_000),
    };
    let renormalize = args.renormalize || file.renormalize.unwrap_or(false);

    let t = TransitionMatrix::from_graph(&archive.graph, normalization)?;
    let diffused = diffuse_topk(&t, &cfg, renormalize)?;
    let kept: usize = diffused.rows.iter().map(Vec::len).sum();
    info!(
        "diffused {} rows, keeping {} entries (top_k = {})",
        diffused.n(),
        kept,
        cfg.top_k
    );

    let out = args.out.unwrap_or(args.archive);
    export::save(
        &archive.graph,
        Some(&diffused),
        archive.discretizer.as_ref(),
        &archive.manifest.provenance,
        &out,
    )?;
    print_json(&json!({
        "archive": out,
        "rows": diffused.n(),
        "kept_entries": kept,
        "teleport": cfg.teleport,
        "top_k": cfg.top_k,
        "normalization": normalization,
        "renormalized": renormalize,
    }));
    Ok(())
}

fn cmd_query(args: QueryArgs, file: FileConfig) -> CliResult<()> {
    let archive = load_archive(&args.archive)?;
    let disc = require_discretizer(&archive)?;
    let window_path = require(args.window, "--window")?;
    let timestamp_column = args.timestamp_column || file.timestamp_column.unwrap_or(false);
    let (window, _) = load_window(&window_path, timestamp_column, disc)?;

    let g = &archive.graph;
    let mask = query::mask(g, &window, g.k())?;
    let set_ids = mask.set_ids();
    info!(
        "window resolved to {} nodes over {} tuples",
        set_ids.len(),
        mask.resolutions.len()
    );

    let mut record = json!({
        "window": 0,
        "set_node_ids": set_ids,
        "resolutions": mask.resolutions,
    });
    if args.sample {
        let cfg = SampleConfig {
            f: args.f.or(file.f).unwrap_or(16),
            seed: args.seed.or(file.seed).unwrap_or(0),
        };
        let mut samples = serde_json::Map::new();
        for &id in &set_ids {
            let tuples = query::sample_features(g, id, &cfg)?;
            samples.insert(id.to_string(), json!(tuples));
        }
        record["samples"] = serde_json::Value::Object(samples);
    }

    if let Some(out) = args.out.or(file.out) {
        let mut text = serde_json::to_string(&record).expect("serializable");
        text.push('\n');
        std::fs::write(&out, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
        info!("mask record written to {}", out.display());
    }
    print_json(&record);
    Ok(())
}

fn cmd_export(args: ExportArgs, file: FileConfig) -> CliResult<()> {
    let archive = load_archive(&args.archive)?;
    let disc = require_discretizer(&archive)?;
    let windows_path = require(args.windows, "--windows")?;
    let window_len = require(args.window_len.or(file.window_len), "--window-len")?;
    let out = require(args.out.or(file.out), "--out")?;
    let timestamp_column = args.timestamp_column || file.timestamp_column.unwrap_or(false);

    if window_len == 0 {
        return Err(CliError::Usage("--window-len must be at least 1".into()));
    }
    let ds = ingest::load_csv(&windows_path, timestamp_column)?;
    if ds.len() % window_len != 0 {
        return Err(CliError::Data(format!(
            "{} holds {} steps, not a multiple of --window-len {}",
            windows_path.display(),
            ds.len(),
            window_len
        )));
    }
    let mut windows = Vec::with_capacity(ds.len() / window_len);
    for start in (0..ds.len()).step_by(window_len) {
        let chunk = ds.slice_cols(start, start + window_len);
        windows.push(QueryWindow::from_raw(chunk.values, disc)?);
    }

    let g = &archive.graph;
    export::export_mask_batch(g, &windows, g.k(), &out)?;
    info!("wrote {} mask records to {}", windows.len(), out.display());
    print_json(&json!({
        "out": out,
        "windows": windows.len(),
        "window_len": window_len,
    }));
    Ok(())
}

fn cmd_forecast(args: ForecastArgs, file: FileConfig) -> CliResult<()> {
    let archive = load_archive(&args.archive)?;
    let disc = require_discretizer(&archive)?;
    let window_path = require(args.window, "--window")?;
    let timestamp_column = args.timestamp_column || file.timestamp_column.unwrap_or(false);
    let (window, names) = load_window(&window_path, timestamp_column, disc)?;

    let cfg = ForecastConfig {
        horizon: args.horizon.or(file.horizon).unwrap_or(96),
        mode: parse_mode(args.mode.as_deref(), file.mode)?,
        fallback: parse_fallback(args.fallback.as_deref(), file.fallback)?,
    };
    let predictions = forecast::forecast(&archive.graph, disc, &window, &cfg)?;
    info!(
        "forecast {} steps across {} dimensions",
        cfg.horizon,
        predictions.len()
    );

    let metrics = match &args.truth {
        None => serde_json::Value::Null,
        Some(path) => {
            let truth = ingest::load_csv(path, timestamp_column)?;
            if truth.dims() != predictions.len() || truth.len() < cfg.horizon {
                return Err(CliError::Data(format!(
                    "truth file must provide {} dimensions x at least {} steps",
                    predictions.len(),
                    cfg.horizon
                )));
            }
            let mut per_dim = Vec::new();
            let mut mse_sum = 0.0;
            let mut mae_sum = 0.0;
            for (i, pred) in predictions.iter().enumerate() {
                let y = &truth.values[i][..cfg.horizon];
                let mse = forecast::mse(y, pred)?;
                let mae = forecast::mae(y, pred)?;
                mse_sum += mse;
                mae_sum += mae;
                per_dim.push(json!({
                    "dimension": names.get(i),
                    "mse": mse,
                    "mae": mae,
                }));
            }
            let d = predictions.len() as f64;
            json!({
                "per_dimension": per_dim,
                "mse": mse_sum / d,
                "mae": mae_sum / d,
            })
        }
    };

    let pred_ds = TimeSeriesDataset::new(predictions, names, None)?;
    match args.out.or(file.out) {
        Some(out) => {
            ingest::write_csv(&pred_ds, &out)?;
            info!("predictions written to {}", out.display());
            print_json(&json!({
                "out": out,
                "horizon": cfg.horizon,
                "mode": cfg.mode,
                "metrics": metrics,
            }));
        }
        None => {
            // CSV on stdout; metrics (if any) stay on stderr as a log line.
            let mut text = Vec::new();
            {
                let mut w = csv::Writer::from_writer(&mut text);
                w.write_record(&pred_ds.dim_names).map_err(io_data)?;
                for t in 0..pred_ds.len() {
                    let row: Vec<String> = pred_ds
                        .values
                        .iter()
                        .map(|dim| dim[t].to_string())
                        .collect();
                    w.write_record(&row).map_err(io_data)?;
                }
                w.flush().map_err(|e| CliError::Data(e.to_string()))?;
            }
            print!("{}", String::from_utf8_lossy(&text));
            if !metrics.is_null() {
                info!("forecast metrics: {metrics}");
            }
        }
    }
    Ok(())
}

fn io_data(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn cmd_selftest(args: SelftestArgs) -> CliResult<()> {
    let reports = selftest::run_all(args.quick);
    for r in &reports {
        println!("{}", serde_json::to_string(r).expect("serializable"));
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    info!("self-test: {passed}/{} checks passed", reports.len());
    if selftest::all_passed(&reports) {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "self-test failed: {}/{} checks passed",
            passed,
            reports.len()
        )))
    }
}

// ---------------------------------------------------------------------------

fn run(cli: Cli) -> CliResult<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, file),
        Command::Build(args) => cmd_build(args, file),
        Command::Stats(args) => cmd_stats(args),
        Command::Diffuse(args) => cmd_diffuse(args, file),
        Command::Query(args) => cmd_query(args, file),
        Command::Export(args) => cmd_export(args, file),
        Command::Forecast(args) => cmd_forecast(args, file),
        Command::Selftest(args) => cmd_selftest(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{}", e.message());
            ExitCode::from(e.code())
        }
    }
}
