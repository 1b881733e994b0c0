//! Deterministic scripted provider for offline runs and tests.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;

use super::{canonical_digest, CompletionClient, CompletionRequest, CompletionResponse, ErrorClass, ProviderError};
use crate::domain::Label;
use crate::error::{Error, Result};

const TAG_OPEN: &str = "[[sample:";
const TAG_CLOSE: &str = "]]";

/// The tag line the runner embeds in prompts when the mock is active.
pub fn sample_tag(sample_id: &str) -> String {
    format!("{TAG_OPEN}{sample_id}{TAG_CLOSE}")
}

fn find_sample_tag(prompt: &str) -> Option<&str> {
    let start = prompt.find(TAG_OPEN)? + TAG_OPEN.len();
    let len = prompt[start..].find(TAG_CLOSE)?;
    Some(&prompt[start..start + len])
}

pub fn verdict_line(label: Label) -> &'static str {
    match label {
        Label::Sarcastic => "VERDICT: SARCASTIC",
        Label::NotSarcastic => "VERDICT: NOT SARCASTIC",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockScript {
    /// Answers each prompt with the gold label of its tagged sample.
    EchoGold,
    FixedLabel(Label),
    /// Maps canonical request digests to response text.
    ByDigest(HashMap<String, String>),
}

impl MockScript {
    /// Parses a CLI mode: `echo-gold`, `fixed-sarcastic`,
    /// `fixed-not-sarcastic` or `by-digest:<path to JSON object>`.
    pub fn from_mode(mode: &str) -> Result<Self> {
        match mode {
            "echo-gold" => Ok(MockScript::EchoGold),
            "fixed-sarcastic" => Ok(MockScript::FixedLabel(Label::Sarcastic)),
            "fixed-not-sarcastic" => Ok(MockScript::FixedLabel(Label::NotSarcastic)),
            other => match other.strip_prefix("by-digest:") {
                Some(path) => Self::load_digest_map(path),
                None => Err(Error::Config(format!(
                    "unknown mock mode `{other}` (expected echo-gold, fixed-sarcastic, fixed-not-sarcastic or by-digest:<path>)"
                ))),
            },
        }
    }

    fn load_digest_map(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map = serde_json::from_str(&text)
            .map_err(|e| Error::format(path.display().to_string(), format!("line {}", e.line()), e.to_string()))?;
        Ok(MockScript::ByDigest(map))
    }
}

pub struct MockProvider {
    script: MockScript,
    golds: HashMap<String, Label>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(script: MockScript, golds: HashMap<String, Label>) -> Self {
        MockProvider {
            script,
            golds,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn respond(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = match &self.script {
            MockScript::FixedLabel(label) => verdict_line(*label).to_string(),
            MockScript::EchoGold => {
                let id = find_sample_tag(request.prompt()).ok_or_else(|| {
                    ProviderError::new(ErrorClass::ScriptError, "prompt carries no sample tag")
                })?;
                let gold = self.golds.get(id).ok_or_else(|| {
                    ProviderError::new(ErrorClass::ScriptError, format!("no gold label for sample `{id}`"))
                })?;
                verdict_line(*gold).to_string()
            }
            MockScript::ByDigest(map) => {
                let digest = canonical_digest(request);
                map.get(&digest).cloned().ok_or_else(|| {
                    ProviderError::new(ErrorClass::ScriptError, format!("no scripted response for digest {digest}"))
                })?
            }
        };
        Ok(CompletionResponse::text(text))
    }
}

#[async_trait]
impl CompletionClient for MockProvider {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        self.respond(request)
    }

    fn wants_sample_tags(&self) -> bool {
        true
    }
}
