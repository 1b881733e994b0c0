use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::{Mutex, Semaphore};
use tokio::time::Instant;

use super::{CompletionClient, CompletionRequest, CompletionResponse, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimits {
    pub max_in_flight: usize,
    /// `None` disables the per-minute bucket.
    pub requests_per_minute: Option<u32>,
}

impl Default for RateLimits {
    fn default() -> Self {
        RateLimits {
            max_in_flight: 8,
            requests_per_minute: None,
        }
    }
}

#[derive(Debug)]
struct TokenBucket {
    capacity: f64,
    tokens: f64,
    per_second: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(rpm: u32) -> Self {
        let capacity = f64::from(rpm.max(1));
        TokenBucket {
            capacity,
            tokens: capacity,
            per_second: capacity / 60.0,
            last: Instant::now(),
        }
    }

    /// Takes a token, or returns how long to wait for the next one.
    fn try_take(&mut self, now: Instant) -> Result<(), Duration> {
        let elapsed = now.saturating_duration_since(self.last).as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.per_second).min(self.capacity);
        self.last = now;
        if self.tokens >= 1.0 - 1e-9 {
            self.tokens = (self.tokens - 1.0).max(0.0);
            Ok(())
        } else {
            let wait = Duration::from_secs_f64((1.0 - self.tokens) / self.per_second);
            Err(wait.max(Duration::from_millis(1)))
        }
    }
}

/// Bounds concurrent requests and, optionally, requests per minute.
pub struct RateLimitedClient<C> {
    inner: C,
    in_flight: Semaphore,
    bucket: Option<Mutex<TokenBucket>>,
}

impl<C> RateLimitedClient<C> {
    pub fn new(inner: C, limits: RateLimits) -> Self {
        RateLimitedClient {
            inner,
            in_flight: Semaphore::new(limits.max_in_flight.max(1)),
            bucket: limits.requests_per_minute.map(|rpm| Mutex::new(TokenBucket::new(rpm))),
        }
    }

    async fn wait_for_token(&self) {
        let Some(bucket) = &self.bucket else { return };
        loop {
            let wait = bucket.lock().await.try_take(Instant::now());
            match wait {
                Ok(()) => return,
                Err(delay) => tokio::time::sleep(delay).await,
            }
        }
    }
}

#[async_trait]
impl<C: CompletionClient> CompletionClient for RateLimitedClient<C> {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        self.wait_for_token().await;
        self.inner.complete(request).await
    }

    fn wants_sample_tags(&self) -> bool {
        self.inner.wants_sample_tags()
    }
}
