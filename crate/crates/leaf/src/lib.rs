//! LEAF: sentence-level fact checking of LLM answers against a locally
//! indexed corpus, and the data plumbing built on top of it.
//!
//! The crate is organized around one number: the fraction of a response's
//! sentences that a rater judges supported by retrieved evidence. Everything
//! else consumes that score.
//!
//! * [`corpus`] tokenizes documents and serves BM25 retrieval.
//! * [`gateway`] talks to an OpenAI-compatible chat-completions backend, or
//!   to a scripted mock for offline runs.
//! * [`prompt`] renders the query-generation, fact-check, and answer prompts
//!   and parses the model outputs back out of free text.
//! * [`sentences`] splits a response into checkable sentences.
//! * [`factcheck`] runs the per-sentence retrieve-then-rate loop and scores
//!   a whole response.
//! * [`fcrag`] regenerates failing answers with the failed evidence attached
//!   (fact-check-then-RAG) and compares runs.
//! * [`selftrain`] filters scored responses into SFT data and preference
//!   pairs.
//! * [`simpo`] computes the SimPO preference loss and its gradients from
//!   token log probabilities.
//! * [`eval`] loads multiple-choice datasets, scores runs, and renders
//!   report tables.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod factcheck;
pub mod fcrag;
pub mod gateway;
pub mod jsonl;
pub mod prompt;
pub mod selftrain;
pub mod sentences;
pub mod simpo;

pub mod cli;
pub(crate) mod workers;

pub use error::{Error, Result};
