use std::collections::BTreeSet;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{CompletionClient, CompletionRequest, CompletionResponse, ErrorClass, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub retry_on: BTreeSet<ErrorClass>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff_ms: 500,
            backoff_multiplier: 2.0,
            retry_on: [ErrorClass::RateLimited, ErrorClass::Transient, ErrorClass::Timeout]
                .into_iter()
                .collect(),
        }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        RetryPolicy {
            max_attempts: 1,
            ..Default::default()
        }
    }

    pub fn should_retry(&self, class: ErrorClass) -> bool {
        // Auth and malformed requests never succeed on a second try.
        !matches!(class, ErrorClass::AuthError | ErrorClass::BadRequest) && self.retry_on.contains(&class)
    }

    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.backoff_multiplier.max(1.0).powi(retry as i32);
        Duration::from_millis((self.base_backoff_ms as f64 * factor).round() as u64)
    }
}

pub async fn complete_with_retry<C: CompletionClient + ?Sized>(
    client: &C,
    request: &CompletionRequest,
    policy: &RetryPolicy,
) -> Result<CompletionResponse, ProviderError> {
    let max_attempts = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.complete(request).await {
            Ok(response) => return Ok(response),
            Err(err) if attempt < max_attempts && policy.should_retry(err.class) => {
                let delay = policy.backoff(attempt - 1);
                tracing::warn!(attempt, ?delay, error = %err, "retrying completion");
                tokio::time::sleep(delay).await;
            }
            Err(err) => return Err(err),
        }
    }
}

pub struct RetryingClient<C> {
    inner: C,
    policy: RetryPolicy,
}

impl<C> RetryingClient<C> {
    pub fn new(inner: C, policy: RetryPolicy) -> Self {
        RetryingClient { inner, policy }
    }
}

#[async_trait]
impl<C: CompletionClient> CompletionClient for RetryingClient<C> {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        complete_with_retry(&self.inner, request, &self.policy).await
    }

    fn wants_sample_tags(&self) -> bool {
        self.inner.wants_sample_tags()
    }
}
