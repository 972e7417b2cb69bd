//! The `aesthete` command line.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
//! failure, 3 a dependency (model endpoint, embedder, replay cache) is
//! unavailable.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{AppConfig, ConfigError};
use crate::datastore::{
    read_embeddings, read_ldj, write_embeddings, Catalog, DatastoreError, EmbeddingRecord, QuestionSet,
};
use crate::embedder::EmbedError;
use crate::evaluation::{eval_a100, eval_cir, eval_fitb, run_ablation, Datasets, EvalError, EvalOptions, EvalReport};
use crate::fusion::{AavaSign, FusionError};
use crate::pipeline::{EngineError, PipelineConfig, ReasoningTask};
use crate::reasoning::{CacheMode, ReasoningError};
use crate::retrieval::RetrievalError;
use crate::service::AppState;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_UNAVAILABLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "aesthete", version, about = "Aesthetic-aware outfit completion engine")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file (environment variables override it).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Serve reasoning only from the transcript cache; a miss is an error.
    #[arg(long, global = true)]
    pub replay: bool,
    /// Catalog directory (manifest.ldj + images.aemb); overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub catalog: Option<PathBuf>,
    /// Transcript cache directory (default: `cache/` in the catalog directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Catalog checks.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Embedding file utilities.
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Run the reasoning step for one query and print the record.
    Reason(ReasonArgs),
    /// Complete one outfit and print the ranking with its explanation.
    Query(QueryArgs),
    /// Evaluate a benchmark split.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the component ablation grid.
    Ablate(AblateArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum IngestCommand {
    /// Load a catalog directory and report problems.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Catalog directory to check.
    #[arg(value_name = "DIR")]
    pub dir: PathBuf,
    /// Also check a question file against the catalog.
    #[arg(long, value_name = "FILE")]
    pub questions: Option<PathBuf>,
    /// Kind of the question file.
    #[arg(long, value_enum, default_value_t = Split::Fitb)]
    pub kind: Split,
}

#[derive(Debug, Subcommand)]
pub enum EmbedCommand {
    /// Convert `{"id": .., "vector": [..]}` lines (or an existing embedding
    /// file) into a validated embedding file.
    Import(ImportArgs),
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Input: line-delimited JSON, or an `.aemb` file to re-validate.
    #[arg(value_name = "INPUT")]
    pub input: PathBuf,
    /// Output embedding file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Fitb,
    Cir,
    A100,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Drop the identify step from the prompt.
    #[arg(long)]
    pub no_identify: bool,
    /// Drop the aesthetic thoughts (prompt step and aesthetic cue).
    #[arg(long)]
    pub no_aesthetic: bool,
    /// Skip fusion and query with the target description alone.
    #[arg(long)]
    pub no_fusion: bool,
    /// Saliency softmax temperature.
    #[arg(long, value_name = "TAU")]
    pub tau: Option<f64>,
    /// Sign of the attribute weighting exponent (+1 or -1).
    #[arg(long, value_name = "SIGN", allow_hyphen_values = true)]
    pub aava_sign: Option<AavaSign>,
    /// Size of the category pool used for gating.
    #[arg(long, value_name = "M")]
    pub pool_size: Option<usize>,
    /// Search the whole catalog instead of the target category.
    #[arg(long)]
    pub all_categories: bool,
}

impl PipelineArgs {
    fn apply(&self, mut cfg: PipelineConfig) -> PipelineConfig {
        cfg.identify_step &= !self.no_identify;
        cfg.aesthetic_thoughts &= !self.no_aesthetic;
        cfg.svaf_enabled &= !self.no_fusion;
        cfg.restrict_to_category &= !self.all_categories;
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(s) = self.aava_sign {
            cfg.aava_sign = s;
        }
        if let Some(m) = self.pool_size {
            cfg.pool_size = m;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct ReasonArgs {
    /// Comma-separated outfit item ids.
    #[arg(long, value_delimiter = ',', required = true, value_name = "IDS")]
    pub outfit: Vec<String>,
    /// Target category (outfit completion task).
    #[arg(long, value_name = "CATEGORY", conflicts_with = "candidates")]
    pub category: Option<String>,
    /// Comma-separated candidate ids (fill-in-the-blank task).
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    pub candidates: Option<Vec<String>>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Comma-separated outfit item ids.
    #[arg(long, value_delimiter = ',', required = true, value_name = "IDS")]
    pub outfit: Vec<String>,
    /// Category of the missing item.
    #[arg(long, value_name = "CATEGORY")]
    pub category: String,
    /// Number of items to return.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Print the full result as JSON.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Question file (line-delimited JSON).
    #[arg(long, value_name = "FILE")]
    pub questions: PathBuf,
    /// Write the report (aggregates and per-question records) as JSON here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Worker threads (default from config).
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Recall cut-offs for outfit completion.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 30, 50], value_name = "KS")]
    pub ks: Vec<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Fill-in-the-blank accuracy.
    Fitb(EvalArgs),
    /// Outfit completion recall@K.
    Cir(EvalArgs),
    /// LAT/AAT aesthetic tests.
    A100(EvalArgs),
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Fill-in-the-blank questions.
    #[arg(long, value_name = "FILE")]
    pub fitb: Option<PathBuf>,
    /// Outfit completion queries.
    #[arg(long, value_name = "FILE")]
    pub cir: Option<PathBuf>,
    /// LAT/AAT questions.
    #[arg(long, value_name = "FILE")]
    pub a100: Option<PathBuf>,
    /// Write one JSON report per grid row here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Worker threads (default from config).
    #[arg(long, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Recall cut-offs for outfit completion.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 30, 50], value_name = "KS")]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address; overrides the config.
    #[arg(long, value_name = "ADDR")]
    pub bind: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Serve(std::io::Error),
}

fn datastore_code(e: &DatastoreError) -> u8 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn engine_code(e: &EngineError) -> u8 {
    match e {
        EngineError::Datastore(d) => datastore_code(d),
        EngineError::Reasoning(r) => match r {
            ReasoningError::EmptyOutfit | ReasoningError::TooManyImages { .. } => EXIT_VALIDATION,
            ReasoningError::CacheMissInReplayMode { .. } => EXIT_UNAVAILABLE,
            r if r.is_unavailable() => EXIT_UNAVAILABLE,
            _ => EXIT_RUNTIME,
        },
        EngineError::Embed(EmbedError::Unavailable(_) | EmbedError::Status { .. }) => EXIT_UNAVAILABLE,
        EngineError::Embed(_) => EXIT_RUNTIME,
        EngineError::Fusion(FusionError::EmptyOutfit) => EXIT_VALIDATION,
        EngineError::Fusion(_) => EXIT_RUNTIME,
        EngineError::Retrieval(r) => match r {
            RetrievalError::InvalidK | RetrievalError::UnknownCategory(_) | RetrievalError::TooFewCandidates(_) => {
                EXIT_VALIDATION
            }
            _ => EXIT_RUNTIME,
        },
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::Question { source, .. } => engine_code(source),
        EvalError::Config { source, .. } => eval_code(source),
        EvalError::MissingVoteShares(_) | EvalError::MissingAttributeTag(_) | EvalError::Options(_) => EXIT_VALIDATION,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Config(c) => match c {
                ConfigError::Catalog(d) => datastore_code(d),
                ConfigError::Embedder(_) | ConfigError::Mllm(_) => EXIT_RUNTIME,
                _ => EXIT_VALIDATION,
            },
            CliError::Datastore(d) => datastore_code(d),
            CliError::Engine(e) => engine_code(e),
            CliError::Eval(e) => eval_code(e),
            CliError::Io { .. } | CliError::Serve(_) => EXIT_RUNTIME,
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn resolve_config(global: &GlobalArgs) -> Result<AppConfig, CliError> {
    let mut cfg = AppConfig::resolve(global.config.as_deref())?;
    if global.replay {
        cfg.cache.mode = CacheMode::Replay;
    }
    if let Some(dir) = &global.catalog {
        cfg.catalog.dir = Some(dir.clone());
    }
    if let Some(dir) = &global.cache {
        cfg.cache.dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn eval_options(cfg: &AppConfig, parallelism: Option<usize>, ks: &[usize]) -> EvalOptions {
    EvalOptions { parallelism: parallelism.unwrap_or(cfg.eval.parallelism), ks: ks.to_vec() }
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

/// Human summary of a report's aggregates.
pub fn summarize(report: &EvalReport) -> String {
    let mut s = String::new();
    let count = |kind| report.records.iter().filter(|r| r.kind == kind).count();
    let hits = |kind| report.records.iter().filter(|r| r.kind == kind && r.correct).count();
    use crate::evaluation::RecordKind as K;
    if let Some(acc) = report.fitb_accuracy {
        writeln!(s, "fitb accuracy {} ({}/{})", fmt3(acc), hits(K::Fitb), count(K::Fitb)).unwrap();
    }
    for (k, r) in &report.recall_at {
        writeln!(s, "recall@{k} {} ({} queries)", fmt3(*r), count(K::Cir)).unwrap();
    }
    if let Some(h) = report.lat_hard {
        writeln!(s, "lat hard {} ({}/{})", fmt3(h), hits(K::Lat), count(K::Lat)).unwrap();
    }
    if let (Some(v), Some(m)) = (report.lat_soft, &report.lat_soft_metric) {
        writeln!(s, "lat soft {} [{m}]", fmt3(v)).unwrap();
    }
    for (a, v) in &report.aat_per_attribute {
        writeln!(s, "aat {a} {}", fmt3(*v)).unwrap();
    }
    if let Some(t) = report.aat_total {
        writeln!(s, "aat total {} ({}/{})", fmt3(t), hits(K::Aat), count(K::Aat)).unwrap();
    }
    s
}

fn run_eval(global: &GlobalArgs, split: Split, args: &EvalArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let cfg = resolve_config(global)?;
    let engine = cfg.build_engine()?;
    let pipeline = args.pipeline.apply(cfg.pipeline_config());
    let opts = eval_options(&cfg, args.parallelism, &args.ks);
    let report = match split {
        Split::Fitb => eval_fitb(&engine, &QuestionSet::load_fitb(&args.questions)?, &pipeline, &opts)?,
        Split::Cir => eval_cir(&engine, &QuestionSet::load_cir(&args.questions)?, &pipeline, &opts)?,
        Split::A100 => eval_a100(&engine, &QuestionSet::load_a100(&args.questions)?, &pipeline, &opts)?,
    };
    if let Some(path) = &args.out {
        write_file(path, &(report.to_json_line() + "\n"))?;
    }
    print(out, &summarize(&report))
}

fn print(out: &mut dyn std::io::Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Io { path: PathBuf::from("<stdout>"), source })
}

fn import_embeddings(args: &ImportArgs) -> Result<String, CliError> {
    let is_aemb = args.input.extension().is_some_and(|e| e == "aemb");
    let (dim, records) = if is_aemb {
        let f = read_embeddings(&args.input)?;
        (f.dim, f.records)
    } else {
        #[derive(serde::Deserialize)]
        struct Line {
            #[serde(alias = "item_id")]
            id: String,
            vector: Vec<f32>,
        }
        let lines: Vec<Line> = read_ldj(&args.input)?;
        let dim = lines.first().map_or(0, |l| l.vector.len());
        (dim, lines.into_iter().map(|l| EmbeddingRecord::new(l.id, l.vector)).collect::<Vec<_>>())
    };
    if records.is_empty() {
        return Err(CliError::Usage(format!("{}: no embeddings", args.input.display())));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = records.iter().find(|r| !seen.insert(r.id.as_str())) {
        return Err(DatastoreError::DuplicateItemId(dup.id.clone()).into());
    }
    write_embeddings(&args.out, dim, &records)?;
    Ok(format!("wrote {} embeddings of dimension {dim} to {}\n", records.len(), args.out.display()))
}

fn validate_catalog(args: &ValidateArgs) -> Result<String, CliError> {
    let catalog = Catalog::load_dir(&args.dir)?;
    let mut s = format!("ok: {} items, dimension {}\n", catalog.len(), catalog.dim());
    for c in catalog.categories() {
        writeln!(s, "  {c}: {}", catalog.category_indices(c)?.len()).unwrap();
    }
    if let Some(path) = &args.questions {
        let set = match args.kind {
            Split::Fitb => QuestionSet::Fitb(QuestionSet::load_fitb(path)?),
            Split::Cir => QuestionSet::Cir(QuestionSet::load_cir(path)?),
            Split::A100 => QuestionSet::A100(QuestionSet::load_a100(path)?),
        };
        set.validate_against(&catalog)?;
        writeln!(s, "ok: {} questions in {}", set.len(), path.display()).unwrap();
    }
    Ok(s)
}

fn run_query(global: &GlobalArgs, args: &QueryArgs) -> Result<String, CliError> {
    let cfg = resolve_config(global)?;
    let engine = cfg.build_engine()?;
    let pipeline = args.pipeline.apply(cfg.pipeline_config());
    let rec = engine.complete_outfit(&args.outfit, &args.category, args.k, &pipeline)?;
    if args.json {
        let value = serde_json::json!({
            "request_id": rec.reasoning.key.to_hex(),
            "items": rec.ranked.items.iter().map(|r| serde_json::json!({"item_id": r.item_id, "score": r.score})).collect::<Vec<_>>(),
            "record": rec.reasoning.record,
            "diagnostics": rec.query.diagnostics,
        });
        return Ok(serde_json::to_string_pretty(&value).expect("serializable") + "\n");
    }
    let mut s = String::new();
    let record = &rec.reasoning.record;
    writeln!(s, "request {}", rec.reasoning.key.to_hex()).unwrap();
    writeln!(s, "target: {}", record.target_description).unwrap();
    for (attr, t) in &record.profile.thoughts {
        writeln!(s, "  {attr}: {} ({})", t.keyword, t.reason).unwrap();
    }
    for attr in &record.profile.incomplete {
        writeln!(s, "  {attr}: (missing)").unwrap();
    }
    for (i, r) in rec.ranked.items.iter().enumerate() {
        writeln!(s, "{:>3}  {:<24} {:.6}", i + 1, r.item_id, r.score).unwrap();
    }
    if !rec.query.diagnostics.gates.is_empty() {
        let gates: Vec<String> = rec.query.diagnostics.gates.iter().map(|(c, g)| format!("{}={g:.4}", c.as_str())).collect();
        writeln!(s, "gates {}", gates.join(" ")).unwrap();
    }
    Ok(s)
}

fn run_reason(global: &GlobalArgs, args: &ReasonArgs) -> Result<String, CliError> {
    let cfg = resolve_config(global)?;
    let engine = cfg.build_engine()?;
    let pipeline = args.pipeline.apply(cfg.pipeline_config());
    let task = match (&args.category, &args.candidates) {
        (Some(c), None) => ReasoningTask::Cir { category: c.clone() },
        (None, Some(c)) => ReasoningTask::Fitb { candidate_item_ids: c.clone() },
        _ => return Err(CliError::Usage("give exactly one of --category or --candidates".into())),
    };
    let r = engine.reason(&args.outfit, &task, &pipeline)?;
    let value = serde_json::json!({ "key": r.key, "from_cache": r.from_cache, "record": r.record });
    Ok(serde_json::to_string_pretty(&value).expect("serializable") + "\n")
}

fn run_ablate(global: &GlobalArgs, args: &AblateArgs) -> Result<String, CliError> {
    let cfg = resolve_config(global)?;
    if args.fitb.is_none() && args.cir.is_none() && args.a100.is_none() {
        return Err(CliError::Usage("give at least one of --fitb, --cir, --a100".into()));
    }
    let datasets = Datasets {
        fitb: args.fitb.as_ref().map(QuestionSet::load_fitb).transpose()?.unwrap_or_default(),
        cir: args.cir.as_ref().map(QuestionSet::load_cir).transpose()?.unwrap_or_default(),
        a100: args.a100.as_ref().map(QuestionSet::load_a100).transpose()?.unwrap_or_default(),
    };
    let engine = cfg.build_engine()?;
    let grid = PipelineConfig::ablation_grid(&cfg.pipeline_config());
    let table = run_ablation(&engine, &grid, &datasets, &eval_options(&cfg, args.parallelism, &args.ks))?;
    if let Some(path) = &args.out {
        write_file(path, &table.to_ldj())?;
    }
    Ok(table.render())
}

fn run_serve(global: &GlobalArgs, args: &ServeArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(global)?;
    if let Some(bind) = &args.bind {
        cfg.service.bind = bind.clone();
    }
    // Blocking clients must be built before the async runtime starts.
    let engine = cfg.build_engine()?;
    let state = AppState::new(engine, cfg.pipeline_config(), &cfg.service);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::Serve)?;
    runtime.block_on(crate::service::serve(state, &cfg.service)).map_err(CliError::Serve)
}

/// Runs a parsed command, writing normal output to `out`.
pub fn execute(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest(IngestCommand::Validate(a)) => {
            if g.config.is_some() {
                resolve_config(g)?;
            }
            print(out, &validate_catalog(a)?)
        }
        Command::Embed(EmbedCommand::Import(a)) => print(out, &import_embeddings(a)?),
        Command::Reason(a) => print(out, &run_reason(g, a)?),
        Command::Query(a) => print(out, &run_query(g, a)?),
        Command::Eval(EvalCommand::Fitb(a)) => run_eval(g, Split::Fitb, a, out),
        Command::Eval(EvalCommand::Cir(a)) => run_eval(g, Split::Cir, a, out),
        Command::Eval(EvalCommand::A100(a)) => run_eval(g, Split::A100, a, out),
        Command::Ablate(a) => print(out, &run_ablate(g, a)?),
        Command::Serve(a) => run_serve(g, a),
    }
}

/// Parses `argv`, runs it, and returns the process exit code. Errors go to
/// standard error.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(()) => {
            let _ = lock.flush();
            EXIT_OK
        }
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// The clap command tree, for documentation checks.
pub fn command() -> clap::Command {
    Cli::command()
}
