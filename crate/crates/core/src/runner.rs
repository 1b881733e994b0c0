//! Drives an evaluation over a dataset and checkpoints every record.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/manifest.json   frozen run configuration
//! <run_dir>/records.jsonl   one PredictionRecord per line, appended as samples finish
//! <run_dir>/metrics.json    MetricsSummary, written on completion
//! ```

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{subsample, Dataset};
use crate::domain::{MetricsSummary, Sample, UnparseablePolicy};
use crate::error::{Error, Result};
use crate::llm::CompletionClient;
use crate::report::summarize;
use crate::strategies::{execute_strategy, is_registered_prompt_set, PredictionRecord, StrategyId};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const DEFAULT_MAX_TOKENS_STAGE1: u32 = 1024;
pub const DEFAULT_MAX_TOKENS_STAGE2: u32 = 512;

/// Wall-clock times, kept apart from the reproducible part of the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTimestamps {
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset_id: String,
    pub dataset_source: String,
    pub dataset_digest: String,
    /// Template family; defaults to the dataset id.
    pub prompt_set: String,
    pub strategy: StrategyId,
    pub provider_id: String,
    pub model: String,
    #[serde(default)]
    pub mock: Option<String>,
    pub temperature: f64,
    pub max_tokens_stage1: u32,
    pub max_tokens_stage2: u32,
    pub seed: u64,
    pub limit: Option<usize>,
    pub concurrency: usize,
    pub unparseable_policy: UnparseablePolicy,
    #[serde(default)]
    pub repeat: Option<u32>,
    pub harness_version: String,
    #[serde(default)]
    pub timestamps: RunTimestamps,
}

impl RunManifest {
    /// Manifest with default decoding settings, bound to `dataset`.
    pub fn new(dataset: &Dataset, strategy: StrategyId, provider_id: &str, model: &str) -> Self {
        let mut manifest = RunManifest {
            run_id: String::new(),
            dataset_id: dataset.id.clone(),
            dataset_source: dataset.source_path.clone(),
            dataset_digest: dataset.digest(),
            prompt_set: dataset.id.clone(),
            strategy,
            provider_id: provider_id.to_string(),
            model: model.to_string(),
            mock: None,
            temperature: 0.0,
            max_tokens_stage1: DEFAULT_MAX_TOKENS_STAGE1,
            max_tokens_stage2: DEFAULT_MAX_TOKENS_STAGE2,
            seed: 0,
            limit: None,
            concurrency: 1,
            unparseable_policy: UnparseablePolicy::default(),
            repeat: None,
            harness_version: HARNESS_VERSION.to_string(),
            timestamps: RunTimestamps::default(),
        };
        manifest.freeze();
        manifest
    }

    /// Content id over every reproducible field (timestamps and the id
    /// itself excluded).
    pub fn derived_id(&self) -> String {
        let mut canonical = self.clone();
        canonical.run_id.clear();
        canonical.timestamps = RunTimestamps::default();
        let bytes = serde_json::to_vec(&canonical).expect("manifest serializes");
        let hash = hex::encode(Sha256::digest(bytes));
        let mut id = format!("{}-{}-{}", self.dataset_id, self.strategy, &hash[..10]);
        if let Some(r) = self.repeat {
            id.push_str(&format!("-r{r}"));
        }
        id
    }

    /// Recomputes `run_id` after the fields have been edited.
    pub fn freeze(&mut self) {
        self.run_id = self.derived_id();
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id != self.derived_id() {
            return Err(Error::Config(format!(
                "manifest fields do not match run id `{}` (expected `{}`)",
                self.run_id,
                self.derived_id()
            )));
        }
        if !is_registered_prompt_set(&self.prompt_set) {
            return Err(Error::Config(format!("no prompt templates registered for `{}`", self.prompt_set)));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if self.max_tokens_stage1 == 0 || self.max_tokens_stage2 == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::Config("temperature must be a non-negative number".into()));
        }
        if self.limit == Some(0) {
            return Err(Error::Config("limit must be positive".into()));
        }
        Ok(())
    }

    /// Samples this run evaluates, in dataset order.
    pub fn select(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.digest() != self.dataset_digest {
            return Err(Error::Config(format!(
                "dataset digest {} does not match the manifest ({}); refusing to mix datasets",
                dataset.digest(),
                self.dataset_digest
            )));
        }
        match self.limit {
            None => Ok(dataset.clone()),
            Some(limit) => subsample(dataset, limit, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub records: Vec<PredictionRecord>,
    pub metrics: MetricsSummary,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), format!("line {}", e.line()), e.to_string()))
}

/// Append-only record log with a single writer.
struct RecordLog {
    path: PathBuf,
    file: File,
}

impl RecordLog {
    fn open(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(RecordLog { path, file })
    }

    fn append(&mut self, record: &PredictionRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Parses a record log, keeping the last valid line per sample id.
/// Malformed lines are skipped so their samples get re-evaluated.
pub fn read_record_log(path: &Path) -> Result<HashMap<String, PredictionRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut records = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PredictionRecord>(line) {
            Ok(record) => {
                records.insert(record.sample_id.clone(), record);
            }
            Err(e) => tracing::warn!(path = %path.display(), line = idx + 1, error = %e, "skipping corrupt record"),
        }
    }
    Ok(records)
}

pub async fn run_evaluation<C: CompletionClient + ?Sized>(
    manifest: &RunManifest,
    dataset: &Dataset,
    client: &C,
    run_dir: &Path,
) -> Result<RunResult> {
    manifest.validate()?;
    let selected = manifest.select(dataset)?;

    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let records_path = run_dir.join(RECORDS_FILE);
    if fs::metadata(&records_path).map(|m| m.len() > 0).unwrap_or(false) {
        return Err(Error::Config(format!(
            "{} already holds records; resume the run or choose another output directory",
            run_dir.display()
        )));
    }
    let mut manifest = manifest.clone();
    manifest.timestamps = RunTimestamps {
        started_at: Some(Utc::now()),
        finished_at: None,
    };
    write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;

    evaluate(manifest, &selected, client, run_dir, HashMap::new()).await
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest> {
    read_json(&run_dir.join(MANIFEST_FILE))
}

pub async fn resume<C: CompletionClient + ?Sized>(
    run_dir: &Path,
    dataset: &Dataset,
    client: &C,
) -> Result<RunResult> {
    let manifest = load_manifest(run_dir)?;
    manifest.validate()?;
    let selected = manifest.select(dataset)?;
    let existing = read_record_log(&run_dir.join(RECORDS_FILE))?;
    evaluate(manifest, &selected, client, run_dir, existing).await
}

async fn evaluate<C: CompletionClient + ?Sized>(
    mut manifest: RunManifest,
    selected: &Dataset,
    client: &C,
    run_dir: &Path,
    mut done: HashMap<String, PredictionRecord>,
) -> Result<RunResult> {
    done.retain(|id, record| {
        record.strategy == manifest.strategy && selected.samples.iter().any(|s| &s.id == id)
    });
    let pending: Vec<&Sample> = selected
        .samples
        .iter()
        .filter(|s| !done.contains_key(&s.id))
        .collect();
    tracing::info!(
        run_id = %manifest.run_id,
        total = selected.len(),
        pending = pending.len(),
        "evaluating"
    );

    let mut log = RecordLog::open(run_dir.join(RECORDS_FILE))?;
    let strategy = manifest.strategy;
    let manifest_ref = &manifest;
    let mut results = stream::iter(pending)
        .map(|sample| execute_strategy(strategy, sample, client, manifest_ref))
        .buffer_unordered(manifest.concurrency);
    while let Some(result) = results.next().await {
        let record = result?;
        log.append(&record)?;
        done.insert(record.sample_id.clone(), record);
    }
    drop(results);
    drop(log);

    let records: Vec<PredictionRecord> = selected
        .samples
        .iter()
        .map(|s| done.remove(&s.id).expect("every selected sample has a record"))
        .collect();

    // Compact the log into dataset order; this also drops superseded lines.
    let mut compacted = String::new();
    for record in &records {
        compacted.push_str(&serde_json::to_string(record).expect("record serializes"));
        compacted.push('\n');
    }
    write_atomic(&run_dir.join(RECORDS_FILE), compacted.as_bytes())?;

    let metrics = summarize(&records, &selected.golds(), manifest.unparseable_policy)?;
    write_json(&run_dir.join(METRICS_FILE), &metrics)?;
    manifest.timestamps.finished_at = Some(Utc::now());
    write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;

    Ok(RunResult {
        manifest,
        records,
        metrics,
    })
}

/// Reads a finished run directory.
pub fn load_run(run_dir: &Path) -> Result<RunResult> {
    let manifest = load_manifest(run_dir)?;
    let metrics: MetricsSummary = read_json(&run_dir.join(METRICS_FILE))?;
    let by_id = read_record_log(&run_dir.join(RECORDS_FILE))?;
    let mut records: Vec<PredictionRecord> = by_id.into_values().collect();
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(RunResult {
        manifest,
        records,
        metrics,
    })
}
