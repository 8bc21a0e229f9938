//! Retry wrapper for transient backend failures.

use std::time::Duration;

use super::{Backend, GenRequest, GenResponse};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total tries, including the first. Clamped to at least 1.
    pub max_attempts: usize,
    /// Fixed sleep between tries.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Re-issues calls that failed with a retryable error (transport trouble,
/// HTTP 429/5xx). Non-retryable errors and successes pass straight
/// through. When the budget runs out, the returned error carries the
/// per-attempt history so logs show what actually happened.
pub struct RetryBackend<B> {
    inner: B,
    policy: RetryPolicy,
}

pub fn with_retry<B: Backend>(inner: B, policy: RetryPolicy) -> RetryBackend<B> {
    RetryBackend { inner, policy }
}

impl<B: Backend> Backend for RetryBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        let max_attempts = self.policy.max_attempts.max(1);
        let mut history = Vec::new();
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            match self.inner.generate(req) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() => {
                    last = e.to_string();
                    history.push(format!("attempt {attempt}: {e}"));
                    if attempt < max_attempts && !self.policy.backoff.is_zero() {
                        std::thread::sleep(self.policy.backoff);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::RetriesExhausted {
            attempts: max_attempts,
            history,
            last,
        })
    }
}
