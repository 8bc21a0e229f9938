//! Shared error type for the whole crate.
//!
//! Every fallible operation returns [`Error`]. The CLI maps an error to a
//! nonzero exit code plus a single machine-readable JSON object on stderr,
//! so each variant carries a stable `kind` string.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ---- corpus / index ----
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate document id {id:?}")]
    DuplicateDocId { id: String },
    #[error("corpus has no indexable tokens")]
    NoIndexableTokens,
    #[error("invalid BM25 parameters: {detail}")]
    InvalidBm25Params { detail: String },
    #[error("unreadable index file: {detail}")]
    IndexFormat { detail: String },

    // ---- gateway ----
    #[error("invalid generation request: {detail}")]
    InvalidRequest { detail: String },
    #[error("transport failure: {detail}")]
    Transport { detail: String },
    #[error("backend returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("backend response malformed: {detail}")]
    BadBackendResponse { detail: String },
    #[error("no fixture matches prompt (fnv1a {prompt_hash})")]
    FixtureMiss { prompt_hash: String },
    #[error("fixture {pattern:?} has {available} responses, request needs {requested}")]
    FixtureExhausted {
        pattern: String,
        available: usize,
        requested: usize,
    },
    #[error("backend failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: usize,
        history: Vec<String>,
        last: String,
    },

    // ---- prompts / parsing ----
    #[error("template is missing a binding for {name}")]
    MissingPlaceholder { name: String },
    #[error("bad template: {detail}")]
    BadTemplate { detail: String },
    #[error("model output is empty")]
    EmptyOutput,
    #[error("no verdict found in rater output (tail: {tail:?})")]
    UnparseableVerdict { tail: String },
    #[error("no answer option found in model output")]
    NoAnswer,
    #[error("response has no sentences")]
    EmptyResponse,

    // ---- datasets / records ----
    #[error("{}:{line}: {detail}", path.display())]
    Jsonl {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },
    #[error("invalid item {id:?}: {detail}")]
    InvalidItem { id: String, detail: String },
    #[error("unknown id {id:?}")]
    UnknownId { id: String },
    #[error("runs are not aligned: {detail}")]
    RunMismatch { detail: String },
    #[error("invalid scored response: {detail}")]
    InvalidScore { detail: String },
    #[error("{what} is empty")]
    EmptyInput { what: String },

    // ---- simpo ----
    #[error("invalid log probabilities: {detail}")]
    InvalidLogProbs { detail: String },
    #[error("invalid SimPO parameters: {detail}")]
    InvalidSimpoParams { detail: String },

    // ---- config / io ----
    #[error("bad config {}: {detail}", path.display())]
    Config { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a path to a bare I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable snake_case tag for the machine-readable error object.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyCorpus => "empty_corpus",
            Error::DuplicateDocId { .. } => "duplicate_doc_id",
            Error::NoIndexableTokens => "no_indexable_tokens",
            Error::InvalidBm25Params { .. } => "invalid_bm25_params",
            Error::IndexFormat { .. } => "index_format",
            Error::InvalidRequest { .. } => "invalid_request",
            Error::Transport { .. } => "transport",
            Error::HttpStatus { .. } => "http_status",
            Error::BadBackendResponse { .. } => "bad_backend_response",
            Error::FixtureMiss { .. } => "fixture_miss",
            Error::FixtureExhausted { .. } => "fixture_exhausted",
            Error::RetriesExhausted { .. } => "retries_exhausted",
            Error::MissingPlaceholder { .. } => "missing_placeholder",
            Error::BadTemplate { .. } => "bad_template",
            Error::EmptyOutput => "empty_output",
            Error::UnparseableVerdict { .. } => "unparseable_verdict",
            Error::NoAnswer => "no_answer",
            Error::EmptyResponse => "empty_response",
            Error::Jsonl { .. } => "jsonl",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::InvalidItem { .. } => "invalid_item",
            Error::UnknownId { .. } => "unknown_id",
            Error::RunMismatch { .. } => "run_mismatch",
            Error::InvalidScore { .. } => "invalid_score",
            Error::EmptyInput { .. } => "empty_input",
            Error::InvalidLogProbs { .. } => "invalid_log_probs",
            Error::InvalidSimpoParams { .. } => "invalid_simpo_params",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// Whether a retry wrapper should try the call again.
    ///
    /// Transport failures and throttling/server statuses are transient;
    /// everything else (bad request, bad fixture, parse failure) is not.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::HttpStatus { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}
