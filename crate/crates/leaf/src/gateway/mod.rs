//! Model backends behind one narrow trait.
//!
//! Everything upstream (fact checking, regeneration, dataset generation)
//! only needs "prompt in, n completions out". [`Backend`] is that surface;
//! implementations are an OpenAI-compatible HTTP client, a scripted mock
//! for offline and test runs, a retry wrapper, and a concurrency throttle.
//! Calls are blocking: per-item parallelism comes from a worker pool, not
//! from an async runtime.

mod http;
mod mock;
mod retry;

pub use http::{parse_completion_body, wire_body, HttpBackend, HttpBackendConfig};
pub use mock::MockBackend;
pub use retry::{with_retry, RetryBackend, RetryPolicy};

use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// One generation call: a chat transcript plus sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub n: u32,
    pub max_tokens: u32,
}

impl GenRequest {
    /// The common case: a single user message.
    pub fn user(
        model: impl Into<String>,
        prompt: impl Into<String>,
        temperature: f64,
        n: u32,
        max_tokens: u32,
    ) -> GenRequest {
        GenRequest {
            model: model.into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: prompt.into(),
            }],
            temperature,
            n,
            max_tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() {
            return Err(Error::InvalidRequest {
                detail: "model name is empty".to_owned(),
            });
        }
        if self.messages.is_empty() {
            return Err(Error::InvalidRequest {
                detail: "no messages".to_owned(),
            });
        }
        if self.n == 0 {
            return Err(Error::InvalidRequest {
                detail: "n must be at least 1".to_owned(),
            });
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidRequest {
                detail: "max_tokens must be at least 1".to_owned(),
            });
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::InvalidRequest {
                detail: format!("temperature must be finite and >= 0, got {}", self.temperature),
            });
        }
        Ok(())
    }

    /// Message contents joined with newlines; what the mock matches on.
    pub fn flat_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// `texts` holds exactly `n` completions, in choice order.
#[derive(Debug, Clone, PartialEq)]
pub struct GenResponse {
    pub texts: Vec<String>,
    pub backend_id: String,
    pub usage: Usage,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, req: &GenRequest) -> Result<GenResponse>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        (**self).generate(req)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        (**self).generate(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        (**self).generate(req)
    }
}

/// Caps in-flight calls to the wrapped backend. Serving stacks fall over
/// politely under a bounded number of concurrent requests; this enforces
/// the bound on our side with a counting semaphore.
pub struct ThrottledBackend<B> {
    inner: B,
    permits: Mutex<usize>,
    available: Condvar,
}

impl<B: Backend> ThrottledBackend<B> {
    pub fn new(inner: B, max_parallel: usize) -> ThrottledBackend<B> {
        ThrottledBackend {
            inner,
            permits: Mutex::new(max_parallel.max(1)),
            available: Condvar::new(),
        }
    }
}

impl<B: Backend> Backend for ThrottledBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        {
            let mut permits = self.permits.lock().expect("semaphore poisoned");
            while *permits == 0 {
                permits = self.available.wait(permits).expect("semaphore poisoned");
            }
            *permits -= 1;
        }
        let result = self.inner.generate(req);
        {
            let mut permits = self.permits.lock().expect("semaphore poisoned");
            *permits += 1;
        }
        self.available.notify_one();
        result
    }
}

/// FNV-1a over the prompt text; names a prompt in fixture-miss errors
/// without dumping the whole prompt into the error object.
pub(crate) fn prompt_fingerprint(text: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}
