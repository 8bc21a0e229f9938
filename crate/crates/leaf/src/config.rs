//! TOML run configuration.
//!
//! Everything has a default, so a config file only needs the keys it
//! changes. The defaults mirror how the pipeline is normally run: 10
//! samples at temperature 1.2 for fact-check experiments, 5 samples at
//! 0.8 for building ranking cohorts, 3 retrieved passages and up to 3
//! queries per sentence, and 3 regeneration rounds.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{HttpBackendConfig, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeafConfig {
    pub backend: BackendConfig,
    pub generation: GenerationConfig,
    pub factcheck: FactCheckSection,
    pub fcrag: FcRagSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key; unset or
    /// empty means no auth header is sent.
    pub api_key_env: String,
    pub api_key_header: String,
    pub timeout_secs: u64,
    pub max_parallel: usize,
    pub retry_max_attempts: usize,
    pub retry_backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "http://localhost:8000".to_owned(),
            model: "llama-3-70b-instruct".to_owned(),
            api_key_env: "LEAF_API_KEY".to_owned(),
            api_key_header: "authorization".to_owned(),
            timeout_secs: 120,
            max_parallel: 4,
            retry_max_attempts: 3,
            retry_backoff_ms: 500,
        }
    }
}

impl BackendConfig {
    pub fn http_config(&self) -> HttpBackendConfig {
        HttpBackendConfig {
            base_url: self.base_url.clone(),
            api_key: std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty()),
            api_key_header: self.api_key_header.clone(),
            timeout: Duration::from_secs(self.timeout_secs),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.retry_max_attempts,
            backoff: Duration::from_millis(self.retry_backoff_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Samples per question when generating fact-check study cohorts.
    pub factcheck_samples: u32,
    pub factcheck_temperature: f64,
    /// Samples per question when generating ranking/preference cohorts.
    pub ranking_samples: u32,
    pub ranking_temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            factcheck_samples: 10,
            factcheck_temperature: 1.2,
            ranking_samples: 5,
            ranking_temperature: 0.8,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactCheckSection {
    /// Passages retrieved per query.
    pub top_k: usize,
    /// Query-generation iterations per sentence.
    pub max_queries: usize,
    /// The rater runs greedy so verdicts are reproducible.
    pub rater_temperature: f64,
    pub rater_max_tokens: u32,
}

impl Default for FactCheckSection {
    fn default() -> Self {
        FactCheckSection {
            top_k: 3,
            max_queries: 3,
            rater_temperature: 0.0,
            rater_max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcRagSection {
    pub max_rounds: usize,
    /// First-round answer temperature; 0 keeps reruns reproducible.
    pub round1_temperature: f64,
    /// Regeneration rounds run greedy.
    pub regen_temperature: f64,
}

impl Default for FcRagSection {
    fn default() -> Self {
        FcRagSection {
            max_rounds: 3,
            round1_temperature: 0.0,
            regen_temperature: 0.0,
        }
    }
}

impl LeafConfig {
    pub fn load(path: &Path) -> Result<LeafConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config {
            path: path.to_owned(),
            detail: e.to_string(),
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<LeafConfig> {
        match path {
            Some(p) => LeafConfig::load(p),
            None => Ok(LeafConfig::default()),
        }
    }
}

impl Default for LeafConfig {
    fn default() -> Self {
        LeafConfig {
            backend: BackendConfig::default(),
            generation: GenerationConfig::default(),
            factcheck: FactCheckSection::default(),
            fcrag: FcRagSection::default(),
        }
    }
}
