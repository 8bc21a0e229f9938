//! OpenAI-compatible chat-completions client.
//!
//! Speaks the de-facto wire format served by vLLM, llama.cpp, TGI, and the
//! hosted APIs: `POST {base_url}/v1/chat/completions` with a JSON body and
//! `choices[i].message.content` in the reply. Body construction and reply
//! parsing are free functions so they can be unit-tested and fuzzed without
//! a socket.

use std::time::Duration;

use serde::Deserialize;

use super::{Backend, GenRequest, GenResponse, Usage};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    /// Sent as `{api_key_header}: Bearer {key}` when the header is
    /// `authorization`, else as the bare key (e.g. `x-api-key`).
    pub api_key: Option<String>,
    pub api_key_header: String,
    pub timeout: Duration,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            base_url: "http://localhost:8000".to_owned(),
            api_key: None,
            api_key_header: "authorization".to_owned(),
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<HttpBackend> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport {
                detail: format!("building http client: {e}"),
            })?;
        let id = format!("http:{}", config.base_url);
        Ok(HttpBackend { config, client, id })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }
}

/// The JSON body for one request.
pub fn wire_body(req: &GenRequest) -> serde_json::Value {
    serde_json::json!({
        "model": req.model,
        "messages": req.messages,
        "temperature": req.temperature,
        "n": req.n,
        "max_tokens": req.max_tokens,
    })
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Decode a completion reply body. The server must return exactly the
/// number of choices asked for; anything else means the request was
/// silently mangled and the caller's sample bookkeeping would corrupt.
pub fn parse_completion_body(body: &[u8], expected_n: usize) -> Result<(Vec<String>, Usage)> {
    let wire: WireResponse =
        serde_json::from_slice(body).map_err(|e| Error::BadBackendResponse {
            detail: format!("decoding completion body: {e}"),
        })?;
    if wire.choices.len() != expected_n {
        return Err(Error::BadBackendResponse {
            detail: format!("expected {expected_n} choices, got {}", wire.choices.len()),
        });
    }
    let texts = wire.choices.into_iter().map(|c| c.message.content).collect();
    let usage = wire.usage.map_or(Usage::default(), |u| Usage {
        prompt_tokens: u.prompt_tokens,
        completion_tokens: u.completion_tokens,
    });
    Ok((texts, usage))
}

fn excerpt(body: &str) -> String {
    const LIMIT: usize = 512;
    if body.len() <= LIMIT {
        return body.to_owned();
    }
    let mut cut = LIMIT;
    while !body.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}…", &body[..cut])
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        req.validate()?;
        let mut request = self
            .client
            .post(self.endpoint())
            .header("content-type", "application/json")
            .json(&wire_body(req));
        if let Some(key) = &self.config.api_key {
            let value = if self.config.api_key_header.eq_ignore_ascii_case("authorization") {
                format!("Bearer {key}")
            } else {
                key.clone()
            };
            request = request.header(self.config.api_key_header.as_str(), value);
        }
        let response = request.send().map_err(|e| Error::Transport {
            detail: e.to_string(),
        })?;
        let status = response.status();
        let body = response.text().map_err(|e| Error::Transport {
            detail: format!("reading response body: {e}"),
        })?;
        if !status.is_success() {
            return Err(Error::HttpStatus {
                status: status.as_u16(),
                body: excerpt(&body),
            });
        }
        let (texts, usage) = parse_completion_body(body.as_bytes(), req.n as usize)?;
        Ok(GenResponse {
            texts,
            backend_id: self.id.clone(),
            usage,
        })
    }
}
