use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8000,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Default::default()
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Calls the backend, retrying transport failures with exponential backoff.
/// Returns the reply and the number of attempts made.
pub fn complete_with_retry<B: ChatBackend + ?Sized>(
    backend: &B,
    req: &CompletionRequest<'_>,
    policy: &RetryPolicy,
) -> (Result<String, BackendError>, u32) {
    let mut attempt = 0;
    loop {
        let result = backend.complete(req);
        attempt += 1;
        match result {
            Err(e) if e.is_retryable() && attempt <= policy.max_retries => {
                thread::sleep(policy.delay(attempt - 1));
            }
            other => return (other, attempt),
        }
    }
}

/// Token bucket shared by every worker talking to one backend.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let per_sec = requests.max(1) as f64 / 60.0;
        let capacity = per_sec.max(1.0);
        RateLimiter {
            capacity,
            per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap_or_else(|p| p.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.per_sec;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.per_sec)
            };
            thread::sleep(wait);
        }
    }
}

pub struct RateLimited<B> {
    inner: B,
    limiter: RateLimiter,
}

impl<B: ChatBackend> RateLimited<B> {
    pub fn new(inner: B, requests_per_minute: u32) -> Self {
        RateLimited {
            inner,
            limiter: RateLimiter::per_minute(requests_per_minute),
        }
    }
}

impl<B: ChatBackend> ChatBackend for RateLimited<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<String, BackendError> {
        self.limiter.acquire();
        self.inner.complete(req)
    }
}
