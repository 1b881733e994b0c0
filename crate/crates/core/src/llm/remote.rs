//! HTTP clients for the OpenAI-compatible and Anthropic-compatible chat
//! dialects. Only the assistant text and token usage are consumed.

use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{CompletionClient, CompletionRequest, CompletionResponse, ErrorClass, ProviderError, Role};

pub const OPENAI_DEFAULT_URL: &str = "https://api.openai.com/v1";
pub const ANTHROPIC_DEFAULT_URL: &str = "https://api.anthropic.com/v1";
const ANTHROPIC_VERSION: &str = "2023-06-01";

#[derive(Debug, Clone)]
pub struct ProviderSettings {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl ProviderSettings {
    /// Reads `PRAGMABENCH_<PROVIDER>_KEY` and `PRAGMABENCH_<PROVIDER>_URL`.
    pub fn from_env(provider_id: &str, default_url: &str) -> Self {
        let upper = provider_id.to_ascii_uppercase();
        ProviderSettings {
            base_url: std::env::var(format!("PRAGMABENCH_{upper}_URL"))
                .unwrap_or_else(|_| default_url.to_string()),
            api_key: std::env::var(format!("PRAGMABENCH_{upper}_KEY"))
                .ok()
                .filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
        }
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }

    fn key(&self, provider_id: &str) -> Result<&str, ProviderError> {
        self.api_key.as_deref().ok_or_else(|| {
            ProviderError::new(
                ErrorClass::AuthError,
                format!(
                    "no credential for provider `{provider_id}` (set PRAGMABENCH_{}_KEY)",
                    provider_id.to_ascii_uppercase()
                ),
            )
        })
    }
}

fn http_client(timeout: Duration) -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client builds")
}

fn classify_status(status: StatusCode) -> ErrorClass {
    match status.as_u16() {
        401 | 403 => ErrorClass::AuthError,
        408 => ErrorClass::Timeout,
        429 => ErrorClass::RateLimited,
        s if s >= 500 => ErrorClass::Transient,
        _ => ErrorClass::BadRequest,
    }
}

fn classify_transport(err: reqwest::Error) -> ProviderError {
    let class = if err.is_timeout() {
        ErrorClass::Timeout
    } else {
        ErrorClass::Transient
    };
    ProviderError::new(class, err.to_string())
}

async fn post_json(
    builder: reqwest::RequestBuilder,
    body: &Value,
) -> Result<Value, ProviderError> {
    let response = builder.json(body).send().await.map_err(classify_transport)?;
    let status = response.status();
    let text = response.text().await.map_err(classify_transport)?;
    if !status.is_success() {
        let snippet: String = text.chars().take(300).collect();
        return Err(ProviderError::new(classify_status(status), format!("HTTP {status}: {snippet}")));
    }
    serde_json::from_str(&text)
        .map_err(|e| ProviderError::new(ErrorClass::Transient, format!("malformed response body: {e}")))
}

pub struct OpenAiClient {
    settings: ProviderSettings,
    http: reqwest::Client,
}

impl OpenAiClient {
    pub fn new(settings: ProviderSettings) -> Self {
        let http = http_client(settings.timeout);
        OpenAiClient { settings, http }
    }

    fn body(request: &CompletionRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        body
    }
}

#[derive(Deserialize)]
struct OpenAiResponse {
    choices: Vec<OpenAiChoice>,
    usage: Option<OpenAiUsage>,
    model: Option<String>,
}

#[derive(Deserialize)]
struct OpenAiChoice {
    message: OpenAiMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct OpenAiMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct OpenAiUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[async_trait]
impl CompletionClient for OpenAiClient {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        request.validate()?;
        let key = self.settings.key(&request.provider_id)?;
        let builder = self
            .http
            .post(self.settings.endpoint("chat/completions"))
            .bearer_auth(key);
        let raw = post_json(builder, &Self::body(request)).await?;
        let parsed: OpenAiResponse = serde_json::from_value(raw)
            .map_err(|e| ProviderError::new(ErrorClass::Transient, format!("unexpected response shape: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::new(ErrorClass::Transient, "response has no choices"))?;

        let mut meta = serde_json::Map::new();
        if let Some(model) = parsed.model {
            meta.insert("model".into(), Value::String(model));
        }
        if let Some(reason) = choice.finish_reason {
            meta.insert("finish_reason".into(), Value::String(reason));
        }
        Ok(CompletionResponse {
            text: choice.message.content.unwrap_or_default(),
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
            provider_meta: meta,
            from_cache: false,
        })
    }
}

pub struct AnthropicClient {
    settings: ProviderSettings,
    http: reqwest::Client,
}

impl AnthropicClient {
    pub fn new(settings: ProviderSettings) -> Self {
        let http = http_client(settings.timeout);
        AnthropicClient { settings, http }
    }

    fn body(request: &CompletionRequest) -> Value {
        let system: Vec<&str> = request
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .collect();
        let messages: Vec<Value> = request
            .messages
            .iter()
            .filter(|m| m.role != Role::System)
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !system.is_empty() {
            body["system"] = json!(system.join("\n\n"));
        }
        if let Some(stop) = &request.stop {
            body["stop_sequences"] = json!(stop);
        }
        body
    }
}

#[derive(Deserialize)]
struct AnthropicResponse {
    content: Vec<AnthropicBlock>,
    usage: Option<AnthropicUsage>,
    stop_reason: Option<String>,
}

#[derive(Deserialize)]
struct AnthropicBlock {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    text: String,
}

#[derive(Deserialize)]
struct AnthropicUsage {
    input_tokens: Option<u64>,
    output_tokens: Option<u64>,
}

#[async_trait]
impl CompletionClient for AnthropicClient {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        request.validate()?;
        let key = self.settings.key(&request.provider_id)?;
        let builder = self
            .http
            .post(self.settings.endpoint("messages"))
            .header("x-api-key", key)
            .header("anthropic-version", ANTHROPIC_VERSION);
        let raw = post_json(builder, &Self::body(request)).await?;
        let parsed: AnthropicResponse = serde_json::from_value(raw)
            .map_err(|e| ProviderError::new(ErrorClass::Transient, format!("unexpected response shape: {e}")))?;
        let text: String = parsed
            .content
            .iter()
            .filter(|b| b.kind == "text")
            .map(|b| b.text.as_str())
            .collect();
        let mut meta = serde_json::Map::new();
        if let Some(reason) = parsed.stop_reason {
            meta.insert("stop_reason".into(), Value::String(reason));
        }
        Ok(CompletionResponse {
            text,
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.input_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.output_tokens),
            provider_meta: meta,
            from_cache: false,
        })
    }
}
