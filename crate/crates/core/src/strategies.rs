//! Prompting strategies: template rendering, one- or two-call execution and
//! verdict parsing.
//!
//! Templates live in `templates/` as plain text with `{{name}}` placeholders
//! and are compiled into the binary, so snapshot tests pin their bytes.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::{MUSTARD_ID, SEMEVAL_ID};
use crate::domain::{Label, Sample, Verdict};
use crate::error::{Error, Result};
use crate::llm::{mock::sample_tag, ChatMessage, CompletionClient, CompletionRequest};
use crate::runner::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyId {
    Io,
    Cot,
    Tot,
    Boc,
    Coc,
    Goc,
    Mp,
    Pmp,
}

impl StrategyId {
    pub const ALL: [StrategyId; 8] = [
        StrategyId::Io,
        StrategyId::Cot,
        StrategyId::Tot,
        StrategyId::Boc,
        StrategyId::Coc,
        StrategyId::Goc,
        StrategyId::Mp,
        StrategyId::Pmp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Io => "io",
            StrategyId::Cot => "cot",
            StrategyId::Tot => "tot",
            StrategyId::Boc => "boc",
            StrategyId::Coc => "coc",
            StrategyId::Goc => "goc",
            StrategyId::Mp => "mp",
            StrategyId::Pmp => "pmp",
        }
    }

    /// Display label as used in result tables, e.g. `PMP`, `CoT`.
    pub fn display_name(self) -> &'static str {
        match self {
            StrategyId::Io => "IO",
            StrategyId::Cot => "CoT",
            StrategyId::Tot => "ToT",
            StrategyId::Boc => "BoC",
            StrategyId::Coc => "CoC",
            StrategyId::Goc => "GoC",
            StrategyId::Mp => "MP",
            StrategyId::Pmp => "PMP",
        }
    }

    pub fn is_two_stage(self) -> bool {
        matches!(self, StrategyId::Mp | StrategyId::Pmp)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if lower == "toc" {
            return Err(Error::Config(
                "strategy `toc` (Tensor of Cues) requires model training and is out of scope for this harness".into(),
            ));
        }
        StrategyId::ALL
            .into_iter()
            .find(|id| id.as_str() == lower)
            .ok_or_else(|| {
                let known: Vec<_> = StrategyId::ALL.iter().map(|s| s.as_str()).collect();
                Error::Config(format!("unknown strategy `{s}` (expected one of {})", known.join(", ")))
            })
    }
}

/// Template family, selected by the run's prompt set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PromptSet {
    Dialogue,
    Tweet,
}

impl PromptSet {
    fn lookup(id: &str) -> Result<Self> {
        match id {
            MUSTARD_ID => Ok(PromptSet::Dialogue),
            SEMEVAL_ID => Ok(PromptSet::Tweet),
            other => Err(Error::Config(format!(
                "no prompt templates registered for `{other}` (expected {MUSTARD_ID} or {SEMEVAL_ID})"
            ))),
        }
    }
}

pub fn is_registered_prompt_set(id: &str) -> bool {
    PromptSet::lookup(id).is_ok()
}

macro_rules! template {
    ($name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $name, ".txt"))
    };
}

fn first_stage_template(strategy: StrategyId, set: PromptSet) -> &'static str {
    use PromptSet::*;
    use StrategyId::*;
    match (strategy, set) {
        (Io, Dialogue) => template!("io_mustard"),
        (Io, Tweet) => template!("io_semeval2018t3"),
        (Cot, Dialogue) => template!("cot_mustard"),
        (Cot, Tweet) => template!("cot_semeval2018t3"),
        (Tot, Dialogue) => template!("tot_mustard"),
        (Tot, Tweet) => template!("tot_semeval2018t3"),
        (Boc, Dialogue) => template!("boc_mustard"),
        (Boc, Tweet) => template!("boc_semeval2018t3"),
        (Coc, Dialogue) => template!("coc_mustard"),
        (Coc, Tweet) => template!("coc_semeval2018t3"),
        (Goc, Dialogue) => template!("goc_mustard"),
        (Goc, Tweet) => template!("goc_semeval2018t3"),
        (Mp, Dialogue) => template!("mp_stage1_mustard"),
        (Mp, Tweet) => template!("mp_stage1_semeval2018t3"),
        (Pmp, Dialogue) => template!("pmp_stage1_mustard"),
        (Pmp, Tweet) => template!("pmp_stage1_semeval2018t3"),
    }
}

fn second_stage_template(strategy: StrategyId) -> Option<&'static str> {
    match strategy {
        StrategyId::Pmp => Some(template!("pmp_stage2")),
        StrategyId::Mp => Some(template!("mp_stage2")),
        _ => None,
    }
}

pub const PLACEHOLDERS: [&str; 4] = ["utterance", "context", "speaker", "analysis"];

/// Single-pass placeholder substitution: values are inserted verbatim and
/// never rescanned, so a value containing `{{...}}` is left untouched.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match values.iter().find(|(key, _)| *key == name) {
                    Some((_, value)) => out.push_str(value),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

pub const NO_CONTEXT: &str = "(no prior context)";

/// `SPEAKER: text` lines in source order.
pub fn render_context(sample: &Sample) -> String {
    if sample.context_turns.is_empty() {
        return NO_CONTEXT.to_string();
    }
    sample
        .context_turns
        .iter()
        .map(|turn| format!("{}: {}", turn.speaker, turn.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_first_stage(strategy: StrategyId, sample: &Sample, prompt_set: &str) -> Result<String> {
    let set = PromptSet::lookup(prompt_set)?;
    let context = render_context(sample);
    let speaker = sample.speaker.as_deref().unwrap_or("SPEAKER");
    Ok(fill_template(
        first_stage_template(strategy, set),
        &[
            ("utterance", sample.utterance.as_str()),
            ("context", context.as_str()),
            ("speaker", speaker),
        ],
    ))
}

pub fn render_pmp_stage1(sample: &Sample, prompt_set: &str) -> Result<String> {
    render_first_stage(StrategyId::Pmp, sample, prompt_set)
}

pub fn render_pmp_stage2(stage1_analysis: &str) -> Result<String> {
    render_second_stage(StrategyId::Pmp, stage1_analysis)
}

pub fn render_mp_stage1(sample: &Sample, prompt_set: &str) -> Result<String> {
    render_first_stage(StrategyId::Mp, sample, prompt_set)
}

pub fn render_mp_stage2(stage1_analysis: &str) -> Result<String> {
    render_second_stage(StrategyId::Mp, stage1_analysis)
}

fn render_second_stage(strategy: StrategyId, analysis: &str) -> Result<String> {
    if analysis.trim().is_empty() {
        return Err(Error::Argument("stage-1 analysis is empty".into()));
    }
    let template = second_stage_template(strategy).expect("two-stage strategy");
    Ok(fill_template(template, &[("analysis", analysis)]))
}

pub fn render_baseline(strategy: StrategyId, sample: &Sample, prompt_set: &str) -> Result<String> {
    if strategy.is_two_stage() {
        return Err(Error::Argument(format!(
            "`{strategy}` is a two-stage strategy; use its stage renderers"
        )));
    }
    render_first_stage(strategy, sample, prompt_set)
}

/// The prompts a strategy sends for one sample. `stage2` is a template whose
/// `{{analysis}}` slot receives the stage-1 response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub stage1: String,
    pub stage2: Option<String>,
    pub system_preamble: Option<String>,
}

impl PromptBundle {
    pub fn build(strategy: StrategyId, sample: &Sample, prompt_set: &str) -> Result<Self> {
        Ok(PromptBundle {
            stage1: render_first_stage(strategy, sample, prompt_set)?,
            stage2: second_stage_template(strategy).map(str::to_string),
            system_preamble: None,
        })
    }

    pub fn render_stage2(&self, analysis: &str) -> Option<String> {
        self.stage2
            .as_deref()
            .map(|template| fill_template(template, &[("analysis", analysis)]))
    }
}

fn normalize(line: &str) -> String {
    line.replace(['*', '_', '`'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_uppercase()
}

const NEGATIONS: [&str; 5] = ["NOT SARCASTIC", "NON-SARCASTIC", "NONSARCASTIC", "N'T SARCASTIC", "NOT IRONIC"];

/// Maps free text to a verdict. Never fails.
///
/// 1. The last line containing `VERDICT:` decides, negation first.
/// 2. Otherwise the last three non-empty lines are searched for a negated
///    label, then for `sarcastic` / `ironic`.
/// 3. Otherwise the text is unparseable.
pub fn parse_verdict(final_text: &str) -> Verdict {
    let lines: Vec<String> = final_text
        .lines()
        .map(normalize)
        .filter(|l| !l.is_empty())
        .collect();

    if let Some(line) = lines.iter().rev().find(|l| l.contains("VERDICT:")) {
        let answer = &line[line.rfind("VERDICT:").unwrap() + "VERDICT:".len()..];
        if NEGATIONS[..4].iter().any(|n| answer.contains(n)) {
            return Verdict::Decided(Label::NotSarcastic);
        }
        if answer.contains("SARCASTIC") {
            return Verdict::Decided(Label::Sarcastic);
        }
    }

    let tail = lines[lines.len().saturating_sub(3)..].join("\n");
    if NEGATIONS.iter().any(|n| tail.contains(n)) {
        return Verdict::Decided(Label::NotSarcastic);
    }
    if tail.contains("SARCASTIC") || tail.contains("IRONIC") {
        return Verdict::Decided(Label::Sarcastic);
    }
    Verdict::Unparseable {
        raw: final_text.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTranscript {
    pub prompt: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RecordRepr")]
pub struct PredictionRecord {
    pub sample_id: String,
    pub strategy: StrategyId,
    pub model: String,
    pub stage_transcripts: Vec<StageTranscript>,
    pub verdict: Verdict,
    pub cached_stages: Vec<bool>,
    pub elapsed_ms: u64,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Deserialize)]
struct RecordRepr {
    sample_id: String,
    strategy: StrategyId,
    model: String,
    stage_transcripts: Vec<StageTranscript>,
    verdict: Verdict,
    cached_stages: Vec<bool>,
    elapsed_ms: u64,
    #[serde(default)]
    error: Option<String>,
}

impl From<RecordRepr> for PredictionRecord {
    fn from(r: RecordRepr) -> Self {
        // The log stores only the verdict tag; the raw text is the last response.
        let verdict = match r.verdict {
            Verdict::Unparseable { .. } => Verdict::Unparseable {
                raw: r
                    .stage_transcripts
                    .last()
                    .map(|t| t.response.clone())
                    .unwrap_or_default(),
            },
            decided => decided,
        };
        PredictionRecord {
            sample_id: r.sample_id,
            strategy: r.strategy,
            model: r.model,
            stage_transcripts: r.stage_transcripts,
            verdict,
            cached_stages: r.cached_stages,
            elapsed_ms: r.elapsed_ms,
            error: r.error,
        }
    }
}

fn build_request(manifest: &RunManifest, prompt: String, max_tokens: u32) -> CompletionRequest {
    CompletionRequest {
        provider_id: manifest.provider_id.clone(),
        model: manifest.model.clone(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: manifest.temperature,
        max_tokens,
        stop: None,
    }
}

/// Runs one sample through a strategy.
///
/// Provider failures other than authentication end up in `record.error` with
/// an unparseable verdict. An authentication failure aborts with
/// [`Error::ProviderAbort`].
pub async fn execute_strategy<C: CompletionClient + ?Sized>(
    strategy: StrategyId,
    sample: &Sample,
    client: &C,
    manifest: &RunManifest,
) -> Result<PredictionRecord> {
    let bundle = PromptBundle::build(strategy, sample, &manifest.prompt_set)?;
    let tag = client.wants_sample_tags().then(|| sample_tag(&sample.id));
    let with_tag = |prompt: String| match &tag {
        Some(tag) => format!("{tag}\n{prompt}"),
        None => prompt,
    };

    let started = Instant::now();
    let mut transcripts = Vec::with_capacity(2);
    let mut cached = Vec::with_capacity(2);
    let mut error = None;

    let mut prompt = with_tag(bundle.stage1.clone());
    let mut max_tokens = manifest.max_tokens_stage1;
    loop {
        let request = build_request(manifest, prompt.clone(), max_tokens);
        match client.complete(&request).await {
            Ok(response) => {
                cached.push(response.from_cache);
                transcripts.push(StageTranscript {
                    prompt,
                    response: response.text,
                    prompt_tokens: response.prompt_tokens,
                    completion_tokens: response.completion_tokens,
                });
            }
            Err(err) if err.class.aborts_run() => return Err(Error::ProviderAbort(err)),
            Err(err) => {
                cached.push(false);
                transcripts.push(StageTranscript {
                    prompt,
                    response: String::new(),
                    prompt_tokens: None,
                    completion_tokens: None,
                });
                error = Some(err.to_string());
                break;
            }
        }
        if transcripts.len() == 2 {
            break;
        }
        let analysis = &transcripts[0].response;
        match bundle.render_stage2(analysis) {
            Some(next) => {
                prompt = with_tag(next);
                max_tokens = manifest.max_tokens_stage2;
            }
            None => break,
        }
    }

    let verdict = match &error {
        Some(_) => Verdict::Unparseable { raw: String::new() },
        None => parse_verdict(&transcripts.last().expect("at least one stage").response),
    };
    Ok(PredictionRecord {
        sample_id: sample.id.clone(),
        strategy,
        model: manifest.model.clone(),
        stage_transcripts: transcripts,
        verdict,
        cached_stages: cached,
        elapsed_ms: started.elapsed().as_millis() as u64,
        error,
    })
}
