//! Chat-completion interface shared by remote providers and the scripted mock.

use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

mod cache;
pub mod mock;
mod ratelimit;
mod remote;
mod retry;

pub use cache::{cached_complete, CacheStats, CachingClient, ResponseCache};
pub use mock::{sample_tag, verdict_line, MockProvider, MockScript};
pub use ratelimit::{RateLimitedClient, RateLimits};
pub use remote::{AnthropicClient, OpenAiClient, ProviderSettings, ANTHROPIC_DEFAULT_URL, OPENAI_DEFAULT_URL};
pub use retry::{complete_with_retry, RetryPolicy, RetryingClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub provider_id: String,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |msg: &str| Err(ProviderError::new(ErrorClass::BadRequest, msg));
        match self.messages.last() {
            None => return bad("request has no messages"),
            Some(last) if last.role != Role::User => return bad("last message must have role user"),
            _ => {}
        }
        if self
            .messages
            .iter()
            .any(|m| m.role == Role::User && m.content.is_empty())
        {
            return bad("user message content is empty");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be a non-negative number");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// Content of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

const RECORD_SEP: char = '\u{1e}';
const UNIT_SEP: char = '\u{1f}';

/// Canonical byte serialization used for digests and cache entries.
///
/// Layout: `provider_id RS model RS temperature(6dp) RS max_tokens RS
/// (stop US)* RS` followed by `role US content RS` for each message.
pub fn canonical_bytes(request: &CompletionRequest) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&request.provider_id);
    out.push(RECORD_SEP);
    out.push_str(&request.model);
    out.push(RECORD_SEP);
    out.push_str(&format!("{:.6}", request.temperature));
    out.push(RECORD_SEP);
    out.push_str(&request.max_tokens.to_string());
    out.push(RECORD_SEP);
    for stop in request.stop.iter().flatten() {
        out.push_str(stop);
        out.push(UNIT_SEP);
    }
    out.push(RECORD_SEP);
    for message in &request.messages {
        out.push_str(message.role.as_str());
        out.push(UNIT_SEP);
        out.push_str(&message.content);
        out.push(RECORD_SEP);
    }
    out.into_bytes()
}

pub fn canonical_digest(request: &CompletionRequest) -> String {
    hex::encode(Sha256::digest(canonical_bytes(request)))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    #[serde(default)]
    pub provider_meta: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub from_cache: bool,
}

impl CompletionResponse {
    pub fn text(text: impl Into<String>) -> Self {
        CompletionResponse {
            text: text.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorClass {
    AuthError,
    BadRequest,
    RateLimited,
    Transient,
    Timeout,
    /// The mock script has no answer for a request.
    ScriptError,
}

impl ErrorClass {
    /// Whether this failure must stop the whole run instead of one sample.
    pub fn aborts_run(self) -> bool {
        matches!(self, ErrorClass::AuthError)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{class:?}: {message}")]
pub struct ProviderError {
    pub class: ErrorClass,
    pub message: String,
}

impl ProviderError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        ProviderError {
            class,
            message: message.into(),
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[async_trait]
pub trait CompletionClient: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;

    /// Whether prompts should carry a `[[sample:<id>]]` tag line. Only the
    /// mock provider reads it.
    fn wants_sample_tags(&self) -> bool {
        false
    }
}

#[async_trait]
impl<C: CompletionClient + ?Sized> CompletionClient for Arc<C> {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        (**self).complete(request).await
    }

    fn wants_sample_tags(&self) -> bool {
        (**self).wants_sample_tags()
    }
}
