use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pragmabench::datasets::{self, Dataset, MUSTARD_ID, SEMEVAL_ID};
use pragmabench::llm::{
    AnthropicClient, CachingClient, CompletionClient, MockProvider, MockScript, OpenAiClient, ProviderSettings,
    RateLimitedClient, RateLimits, ResponseCache, RetryPolicy, ANTHROPIC_DEFAULT_URL, OPENAI_DEFAULT_URL,
};
use pragmabench::report::{self, MachineFormat, ReportRow, TableLayout};
use pragmabench::runner::{self, RunManifest, RunResult, MANIFEST_FILE, RECORDS_FILE};
use pragmabench::strategies::StrategyId;
use pragmabench::Error;

use crate::config::{self, ConfigError, ResolvedConfig, Source, CONFIG_FILE_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATASET: i32 = 3;
pub const EXIT_PROVIDER: i32 = 4;
pub const EXIT_IO: i32 = 5;
pub const EXIT_INTERRUPTED: i32 = 130;

pub const MUSTARD_FILE: &str = "sarcasm_data.json";
pub const SEMEVAL_FILE: &str = "SemEval2018-T3-train-taskA.txt";

#[derive(Debug, Parser)]
#[command(name = "pragmabench", version, about = "Evaluate prompting strategies for sarcasm detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate one strategy over a dataset.
    Run(Box<RunArgs>),
    /// Merge finished runs or result fixtures into a table.
    Report(ReportArgs),
    /// Check a dataset file for duplicate ids, empty texts and class balance.
    Validate(ValidateArgs),
    /// Inspect or clear the response cache.
    Cache(CacheArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Dataset id (mustard, semeval2018t3) or a path to a dataset file.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<String>,
    #[arg(long)]
    pub strategy: Option<String>,
    /// Provider id: openai, anthropic or mock.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Mock mode: echo-gold, fixed-sarcastic, fixed-not-sarcastic, by-digest:<path>.
    #[arg(long)]
    pub mock: Option<String>,
    /// Template family (mustard or semeval2018t3); defaults to the dataset id.
    #[arg(long)]
    pub prompt_set: Option<String>,
    #[arg(long)]
    pub limit: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub concurrency: Option<String>,
    #[arg(long)]
    pub temperature: Option<String>,
    #[arg(long)]
    pub max_tokens_stage1: Option<String>,
    #[arg(long)]
    pub max_tokens_stage2: Option<String>,
    /// count-as-wrong or exclude.
    #[arg(long)]
    pub unparseable_policy: Option<String>,
    /// Repeat index appended to the run id.
    #[arg(long)]
    pub repeat: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<String>,
    /// Parent directory for run directories.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub retry_max_attempts: Option<String>,
    #[arg(long)]
    pub retry_base_backoff_ms: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<String>,
    #[arg(long)]
    pub requests_per_minute: Option<String>,
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue an interrupted run in its existing run directory.
    #[arg(long)]
    pub resume: bool,
    /// Re-run exactly the configuration frozen in a manifest file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl RunArgs {
    fn flag_values(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("dataset", &self.dataset),
            ("data_dir", &self.data_dir),
            ("strategy", &self.strategy),
            ("provider", &self.provider),
            ("model", &self.model),
            ("mock", &self.mock),
            ("prompt_set", &self.prompt_set),
            ("limit", &self.limit),
            ("seed", &self.seed),
            ("concurrency", &self.concurrency),
            ("temperature", &self.temperature),
            ("max_tokens_stage1", &self.max_tokens_stage1),
            ("max_tokens_stage2", &self.max_tokens_stage2),
            ("unparseable_policy", &self.unparseable_policy),
            ("repeat", &self.repeat),
            ("cache_dir", &self.cache_dir),
            ("out", &self.out),
            ("retry_max_attempts", &self.retry_max_attempts),
            ("retry_base_backoff_ms", &self.retry_base_backoff_ms),
            ("max_in_flight", &self.max_in_flight),
            ("requests_per_minute", &self.requests_per_minute),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportLayout {
    PaperTable1,
    Flat,
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Finished run directories.
    pub runs: Vec<PathBuf>,
    /// Structured row files to include; `published` selects the bundled published results.
    #[arg(long)]
    pub fixture: Vec<String>,
    #[arg(long, value_enum, default_value = "paper-table1")]
    pub layout: ReportLayout,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Dataset id or path.
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub data_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CacheAction {
    Stats,
    Clear,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(value_enum)]
    pub action: CacheAction,
    #[arg(long)]
    pub cache_dir: Option<String>,
}

/// A failure with its exit code and stable error-code token.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub token: &'static str,
    pub message: String,
}

impl Failure {
    fn new(code: i32, token: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            token,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Failure::new(EXIT_CONFIG, "E_CONFIG", message)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, token) = match &e {
            Error::Config(_) | Error::Argument(_) => (EXIT_CONFIG, "E_CONFIG"),
            Error::Format { .. } | Error::Data(_) | Error::EmptyRun | Error::EmptyReport => {
                (EXIT_DATASET, "E_DATASET")
            }
            Error::ProviderAbort(_) => (EXIT_PROVIDER, "E_PROVIDER"),
            Error::Io { .. } => (EXIT_IO, "E_IO"),
        };
        Failure::new(code, token, e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

pub async fn dispatch(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(*args).await,
        Command::Report(args) => cmd_report(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Cache(args) => cmd_cache(args),
    };
    match outcome {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error[{}]: {}", failure.token, failure.message);
            failure.code
        }
    }
}

fn dataset_path(spec: &str, data_dir: &str) -> PathBuf {
    match spec {
        MUSTARD_ID => Path::new(data_dir).join(MUSTARD_FILE),
        SEMEVAL_ID => Path::new(data_dir).join(SEMEVAL_FILE),
        path => PathBuf::from(path),
    }
}

fn load_dataset(spec: &str, data_dir: &str) -> Result<Dataset, Failure> {
    let path = dataset_path(spec, data_dir);
    let loaded = match spec {
        MUSTARD_ID => datasets::load_mustard(&path),
        SEMEVAL_ID => datasets::load_semeval(&path),
        _ => datasets::load_path(&path),
    };
    loaded.map_err(|e| match e {
        // A missing or unreadable dataset is a dataset error, not an output-side I/O error.
        Error::Io { path, source } => {
            Failure::new(EXIT_DATASET, "E_DATASET", format!("cannot read dataset {}: {source}", path.display()))
        }
        other => other.into(),
    })
}

fn load_config(args: &RunArgs) -> Result<ResolvedConfig, Failure> {
    let file_path = args
        .config
        .clone()
        .or_else(|| std::env::var(CONFIG_FILE_ENV).ok().map(PathBuf::from));
    let file = match file_path {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::config(format!("cannot read config file {}: {e}", path.display())))?;
            config::parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    Ok(ResolvedConfig::resolve(&args.flag_values(), |k| std::env::var(k).ok(), &file))
}

fn manifest_from_config(cfg: &ResolvedConfig, dataset: &Dataset) -> Result<RunManifest, Failure> {
    let strategy: StrategyId = cfg.required("strategy")?.parse()?;
    let provider = cfg.required("provider")?.to_string();
    let model = cfg.required("model")?.to_string();

    let mut manifest = RunManifest::new(dataset, strategy, &provider, &model);
    manifest.mock = cfg.raw("mock").map(str::to_string);
    if let Some(set) = cfg.raw("prompt_set") {
        manifest.prompt_set = set.to_string();
    }
    manifest.limit = cfg.parse("limit")?;
    manifest.seed = cfg.parse_required("seed")?;
    manifest.concurrency = cfg.parse_required("concurrency")?;
    manifest.temperature = cfg.parse_required("temperature")?;
    manifest.max_tokens_stage1 = cfg.parse_required("max_tokens_stage1")?;
    manifest.max_tokens_stage2 = cfg.parse_required("max_tokens_stage2")?;
    manifest.unparseable_policy = cfg.parse_required("unparseable_policy")?;
    manifest.repeat = cfg.parse("repeat")?;
    manifest.freeze();
    manifest.validate()?;
    Ok(manifest)
}

fn build_client(
    manifest: &RunManifest,
    dataset: &Dataset,
    cfg: &ResolvedConfig,
) -> Result<Arc<dyn CompletionClient>, Failure> {
    let retry = RetryPolicy {
        max_attempts: cfg.parse_required("retry_max_attempts")?,
        base_backoff_ms: cfg.parse_required("retry_base_backoff_ms")?,
        ..Default::default()
    };
    let limits = RateLimits {
        max_in_flight: cfg.parse_required("max_in_flight")?,
        requests_per_minute: cfg.parse("requests_per_minute")?,
    };
    let cache = ResponseCache::new(cfg.required("cache_dir")?);

    let provider: Arc<dyn CompletionClient> = match manifest.provider_id.as_str() {
        "mock" => {
            let mode = manifest.mock.as_deref().unwrap_or("echo-gold");
            let mock = MockProvider::new(MockScript::from_mode(mode)?, dataset.golds());
            // Mock answers are free; only cache them when a cache dir was asked for.
            return Ok(if cfg.source("cache_dir") > Some(Source::Default) {
                Arc::new(CachingClient::new(mock, cache, RetryPolicy::no_retry()))
            } else {
                Arc::new(mock)
            });
        }
        "openai" => Arc::new(OpenAiClient::new(ProviderSettings::from_env(
            "openai",
            OPENAI_DEFAULT_URL,
        ))),
        "anthropic" => Arc::new(AnthropicClient::new(ProviderSettings::from_env(
            "anthropic",
            ANTHROPIC_DEFAULT_URL,
        ))),
        other => {
            return Err(Failure::config(format!(
                "unknown provider `{other}` (expected openai, anthropic or mock)"
            )))
        }
    };
    let limited = RateLimitedClient::new(provider, limits);
    Ok(Arc::new(CachingClient::new(limited, cache, retry)))
}

fn metrics_line(result: &RunResult) -> String {
    format!(
        "acc={:.6} macro_f1={:.6} n={} unparseable={}",
        result.metrics.accuracy, result.metrics.macro_f1, result.metrics.n, result.metrics.counts.unparseable
    )
}

pub async fn cmd_run(args: RunArgs) -> Outcome {
    let mut cfg = load_config(&args)?;

    let (manifest, dataset) = match &args.manifest {
        Some(path) => {
            let manifest = read_manifest_file(path)?;
            manifest.validate()?;
            let dataset = load_dataset(&manifest.dataset_source, ".")?;
            (manifest, dataset)
        }
        None => {
            if cfg.raw("provider") == Some("mock") {
                cfg.set_default("model", "mock");
            }
            let dataset_spec = cfg.required("dataset")?.to_string();
            // Parse the strategy before touching the dataset so a bad id is a config error.
            let _: StrategyId = cfg.required("strategy")?.parse()?;
            cfg.required("provider")?;
            cfg.required("model")?;
            let dataset = load_dataset(&dataset_spec, cfg.required("data_dir")?)?;
            let manifest = manifest_from_config(&cfg, &dataset)?;
            (manifest, dataset)
        }
    };

    let client = build_client(&manifest, &dataset, &cfg)?;
    let run_dir = Path::new(cfg.required("out")?).join(&manifest.run_id);
    let resuming = args.resume && run_dir.join(MANIFEST_FILE).exists();
    if !resuming && run_dir.join(RECORDS_FILE).exists() {
        return Err(Failure::config(format!(
            "run directory {} already exists; pass --resume to continue it",
            run_dir.display()
        )));
    }
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| Failure::new(EXIT_IO, "E_IO", format!("cannot create {}: {e}", run_dir.display())))?;
    std::fs::write(run_dir.join("resolved_config.txt"), cfg.describe())
        .map_err(|e| Failure::new(EXIT_IO, "E_IO", format!("cannot write to {}: {e}", run_dir.display())))?;

    let run = async {
        if resuming {
            runner::resume(&run_dir, &dataset, client.as_ref()).await
        } else {
            runner::run_evaluation(&manifest, &dataset, client.as_ref(), &run_dir).await
        }
    };
    let result = tokio::select! {
        result = run => result?,
        _ = tokio::signal::ctrl_c() => {
            eprintln!(
                "interrupted; completed records are checkpointed in {}. Re-run with --resume to continue.",
                run_dir.display()
            );
            return Ok(EXIT_INTERRUPTED);
        }
    };
    eprintln!("run directory: {}", run_dir.display());
    println!("{}", metrics_line(&result));
    Ok(EXIT_OK)
}

fn read_manifest_file(path: &Path) -> Result<RunManifest, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("invalid manifest {}: {e}", path.display())))
}

pub fn cmd_report(args: ReportArgs) -> Outcome {
    if args.runs.is_empty() && args.fixture.is_empty() {
        return Err(Failure::config("report needs at least one run directory or --fixture"));
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    for dir in &args.runs {
        let run = runner::load_run(dir).map_err(|e| {
            Failure::new(EXIT_DATASET, "E_DATASET", format!("cannot read run {}: {e}", dir.display()))
        })?;
        rows.push(ReportRow::from_run(&run));
    }
    for fixture in &args.fixture {
        if fixture == "published" {
            rows.extend(report::published_rows());
            continue;
        }
        let text = std::fs::read_to_string(fixture)
            .map_err(|e| Failure::new(EXIT_DATASET, "E_DATASET", format!("cannot read {fixture}: {e}")))?;
        rows.extend(report::parse_structured(&text, fixture)?);
    }

    let text = match args.layout {
        ReportLayout::PaperTable1 => report::emit_table(&rows, TableLayout::PaperTable1)?,
        ReportLayout::Flat => report::emit_table(&rows, TableLayout::Flat)?,
        ReportLayout::Csv => report::emit_machine(&rows, MachineFormat::Csv)?,
        ReportLayout::Jsonl => report::emit_machine(&rows, MachineFormat::Structured)?,
    };
    match &args.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::new(EXIT_IO, "E_IO", format!("cannot write {}: {e}", path.display())))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_validate(args: ValidateArgs) -> Outcome {
    let data_dir = args
        .data_dir
        .or_else(|| std::env::var(config::env_name("data_dir")).ok())
        .unwrap_or_else(|| "data".to_string());
    let dataset = load_dataset(&args.dataset, &data_dir)?;
    let report = datasets::validate(&dataset);
    println!("dataset: {} ({} samples)", dataset.id, dataset.len());
    for (label, count) in &report.balance {
        println!("  {label}: {count}");
    }
    for id in &report.duplicate_ids {
        println!("duplicate id: {id}");
    }
    for id in &report.empty_utterances {
        println!("empty utterance: {id}");
    }
    println!("ok: {}", report.ok);
    Ok(if report.ok { EXIT_OK } else { EXIT_INVALID })
}

pub fn cmd_cache(args: CacheArgs) -> Outcome {
    let dir = args
        .cache_dir
        .or_else(|| std::env::var(config::env_name("cache_dir")).ok())
        .unwrap_or_else(|| ".pragmabench/cache".to_string());
    let cache = ResponseCache::new(&dir);
    let io_err = |e: std::io::Error| Failure::new(EXIT_DATASET, "E_PATH", format!("cache dir {dir}: {e}"));
    match args.action {
        CacheAction::Stats => {
            let stats = cache.stats().map_err(io_err)?;
            println!("{} entries, {} bytes", stats.entries, stats.bytes);
        }
        CacheAction::Clear => {
            let removed = cache.clear().map_err(io_err)?;
            println!("{removed} entries removed");
        }
    }
    Ok(EXIT_OK)
}
