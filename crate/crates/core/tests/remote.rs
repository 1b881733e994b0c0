use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use pragmabench::llm::{
    complete_with_retry, AnthropicClient, ChatMessage, CompletionClient, CompletionRequest, ErrorClass, OpenAiClient,
    ProviderSettings, RetryPolicy,
};
use serde_json::{json, Value};

#[derive(Default)]
struct Fake {
    hits: AtomicUsize,
    last_body: std::sync::Mutex<Option<Value>>,
}

async fn chat(State(fake): State<Arc<Fake>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = fake.hits.fetch_add(1, Ordering::SeqCst);
    *fake.last_body.lock().unwrap() = Some(body);
    match headers.get("authorization").and_then(|v| v.to_str().ok()) {
        Some("Bearer good") => {}
        Some("Bearer flaky") if n == 0 => return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({}))),
        Some("Bearer flaky") => {}
        Some("Bearer busy") => return (StatusCode::TOO_MANY_REQUESTS, Json(json!({}))),
        _ => return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"}))),
    }
    (
        StatusCode::OK,
        Json(json!({
            "model": "fake-4",
            "choices": [{"message": {"role": "assistant", "content": "VERDICT: SARCASTIC"}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 4}
        })),
    )
}

async fn messages(State(fake): State<Arc<Fake>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    fake.hits.fetch_add(1, Ordering::SeqCst);
    *fake.last_body.lock().unwrap() = Some(body);
    if headers.get("x-api-key").and_then(|v| v.to_str().ok()) != Some("good") {
        return (StatusCode::FORBIDDEN, Json(json!({})));
    }
    if headers.get("anthropic-version").is_none() {
        return (StatusCode::BAD_REQUEST, Json(json!({})));
    }
    (
        StatusCode::OK,
        Json(json!({
            "content": [{"type": "text", "text": "Not sarcastic.\nVERDICT: NOT SARCASTIC"}],
            "stop_reason": "end_turn",
            "usage": {"input_tokens": 20, "output_tokens": 9}
        })),
    )
}

async fn serve() -> (String, Arc<Fake>) {
    let fake = Arc::new(Fake::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/messages", post(messages))
        .with_state(fake.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), fake)
}

fn settings(base_url: &str, key: Option<&str>) -> ProviderSettings {
    ProviderSettings {
        base_url: base_url.to_string(),
        api_key: key.map(str::to_string),
        timeout: Duration::from_secs(5),
    }
}

fn request(provider: &str) -> CompletionRequest {
    CompletionRequest {
        provider_id: provider.into(),
        model: "fake-4".into(),
        messages: vec![ChatMessage::system("Be terse."), ChatMessage::user("Is this sarcastic?")],
        temperature: 0.0,
        max_tokens: 64,
        stop: None,
    }
}

#[tokio::test]
async fn openai_success_and_status_classes() {
    let (url, fake) = serve().await;
    let ok = OpenAiClient::new(settings(&url, Some("good")))
        .complete(&request("openai"))
        .await
        .unwrap();
    assert_eq!(ok.text, "VERDICT: SARCASTIC");
    assert_eq!(ok.prompt_tokens, Some(12));
    assert_eq!(ok.completion_tokens, Some(4));
    let body = fake.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["max_tokens"], 64);

    let denied = OpenAiClient::new(settings(&url, Some("wrong")))
        .complete(&request("openai"))
        .await
        .unwrap_err();
    assert_eq!(denied.class, ErrorClass::AuthError);

    let busy = OpenAiClient::new(settings(&url, Some("busy")))
        .complete(&request("openai"))
        .await
        .unwrap_err();
    assert_eq!(busy.class, ErrorClass::RateLimited);
}

#[tokio::test]
async fn missing_key_fails_before_network() {
    let (url, fake) = serve().await;
    let err = OpenAiClient::new(settings(&url, None))
        .complete(&request("openai"))
        .await
        .unwrap_err();
    assert_eq!(err.class, ErrorClass::AuthError);
    assert_eq!(fake.hits.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn transient_failure_is_retried() {
    let (url, fake) = serve().await;
    let client = OpenAiClient::new(settings(&url, Some("flaky")));
    let policy = RetryPolicy {
        base_backoff_ms: 1,
        ..Default::default()
    };
    let response = complete_with_retry(&client, &request("openai"), &policy).await.unwrap();
    assert_eq!(response.text, "VERDICT: SARCASTIC");
    assert_eq!(fake.hits.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn anthropic_lifts_system_prompt() {
    let (url, fake) = serve().await;
    let ok = AnthropicClient::new(settings(&url, Some("good")))
        .complete(&request("anthropic"))
        .await
        .unwrap();
    assert_eq!(ok.text, "Not sarcastic.\nVERDICT: NOT SARCASTIC");
    assert_eq!(ok.prompt_tokens, Some(20));
    let body = fake.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["system"], "Be terse.");
    assert_eq!(body["messages"].as_array().unwrap().len(), 1);

    let denied = AnthropicClient::new(settings(&url, Some("nope")))
        .complete(&request("anthropic"))
        .await
        .unwrap_err();
    assert_eq!(denied.class, ErrorClass::AuthError);
}

#[tokio::test]
async fn unreachable_host_is_transient() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let err = OpenAiClient::new(settings(&url, Some("good")))
        .complete(&request("openai"))
        .await
        .unwrap_err();
    assert!(matches!(err.class, ErrorClass::Transient | ErrorClass::Timeout), "{err}");
}
