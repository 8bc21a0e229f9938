//! Prompt templates and parsers for model output.
//!
//! Three templates drive the whole pipeline: one asks the rater model for a
//! search query, one asks it to rate a statement against retrieved
//! knowledge, and one asks the answer model to answer a multiple-choice
//! question with optional knowledge attached. Placeholders use sentinel
//! tokens (`{_KNOWLEDGE_}`) unlikely to collide with prose, and every
//! template must contain each of its placeholders exactly once so a
//! rendered prompt never duplicates or drops a binding.
//!
//! The parsers go the other way: they pull a query, a verdict, or an
//! answer letter back out of free-form model text. They are total over
//! arbitrary input (fuzzed), returning errors rather than panicking.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Placeholder {
    Knowledge,
    Context,
    Statement,
    Question,
    Options,
}

impl Placeholder {
    pub const ALL: [Placeholder; 5] = [
        Placeholder::Knowledge,
        Placeholder::Context,
        Placeholder::Statement,
        Placeholder::Question,
        Placeholder::Options,
    ];

    /// The sentinel token as it appears in template bodies.
    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Knowledge => "{_KNOWLEDGE_}",
            Placeholder::Context => "{_CONTEXT_}",
            Placeholder::Statement => "{_STATEMENT_}",
            Placeholder::Question => "{_QUESTION_}",
            Placeholder::Options => "{_OPTIONS_}",
        }
    }

    /// Human name used in error messages.
    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Knowledge => "KNOWLEDGE",
            Placeholder::Context => "CONTEXT",
            Placeholder::Statement => "STATEMENT",
            Placeholder::Question => "QUESTION",
            Placeholder::Options => "OPTIONS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    /// Ask for one search query given knowledge, context, and statement.
    QueryGen,
    /// Rate a statement as Supported / Not Supported.
    FactCheck,
    /// Answer a multiple-choice question, optionally with knowledge.
    FcRag,
}

impl TemplateKind {
    pub fn required(self) -> &'static [Placeholder] {
        match self {
            TemplateKind::QueryGen | TemplateKind::FactCheck => &[
                Placeholder::Knowledge,
                Placeholder::Context,
                Placeholder::Statement,
            ],
            TemplateKind::FcRag => &[
                Placeholder::Knowledge,
                Placeholder::Question,
                Placeholder::Options,
            ],
        }
    }
}

const QUERY_GEN_TEMPLATE: &str = "\
Instructions:
1. You have been given a STATEMENT, a CONTEXT and some KNOWLEDGE points.
2. Your goal is to try to find evidence that either supports or does not support the factual accuracy of the given STATEMENT in the given CONTEXT.
3. To do this, you are allowed to issue ONE Google Search query that you think will allow you to find additional useful evidence.
4. Your query should aim to obtain new information that does not appear in the KNOWLEDGE. This new information should be useful for determining the factual accuracy of the given STATEMENT.
5. Format your final query by putting it in a markdown code block.

KNOWLEDGE:
{_KNOWLEDGE_}

CONTEXT:
{_CONTEXT_}

STATEMENT:
{_STATEMENT_}
";

const FACT_CHECK_TEMPLATE: &str = "\
Instructions:
1. You have been given a STATEMENT, a CONTEXT and some KNOWLEDGE points.
2. Determine whether the given STATEMENT is supported by the given CONTEXT, you can use the given KNOWLEDGE to support your decision if necessary. The STATEMENT is supported if it is a proper action or reasoning given the CONTEXT.
3. Before showing your answer, think step-by-step and show your specific reasoning.
4. If the STATEMENT is supported by the CONTEXT, be sure to show the supporting evidence.
5. After stating your reasoning, restate the STATEMENT and then determine your final answer based on your reasoning and the STATEMENT.
6. Your final answer should be either \"Supported\" or \"Not Supported\". Wrap your final answer in square brackets.

KNOWLEDGE:
{_KNOWLEDGE_}

CONTEXT:
{_CONTEXT_}

STATEMENT:
{_STATEMENT_}
";

const FC_RAG_TEMPLATE: &str = "\
Given a multiple choice question, please select the correct answer and also provide a detailed reasoning for your choice. You can using the information provided in the knowledge section if necessary.

KNOWLEDGE:
{_KNOWLEDGE_}

QUESTION:
{_QUESTION_}

OPTIONS:
{_OPTIONS_}

ANSWER:
";

/// A validated template: each required placeholder occurs exactly once,
/// and no placeholder of another kind occurs at all.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    kind: TemplateKind,
    body: String,
}

impl PromptTemplate {
    pub fn default_for(kind: TemplateKind) -> PromptTemplate {
        let body = match kind {
            TemplateKind::QueryGen => QUERY_GEN_TEMPLATE,
            TemplateKind::FactCheck => FACT_CHECK_TEMPLATE,
            TemplateKind::FcRag => FC_RAG_TEMPLATE,
        };
        PromptTemplate::new(kind, body).expect("built-in template is valid")
    }

    pub fn new(kind: TemplateKind, body: impl Into<String>) -> Result<PromptTemplate> {
        let body = body.into();
        for ph in Placeholder::ALL {
            let count = body.matches(ph.token()).count();
            let required = kind.required().contains(&ph);
            if required && count != 1 {
                return Err(Error::BadTemplate {
                    detail: format!("{} must appear exactly once, found {count}", ph.name()),
                });
            }
            if !required && count != 0 {
                return Err(Error::BadTemplate {
                    detail: format!("{} does not belong in this template", ph.name()),
                });
            }
        }
        Ok(PromptTemplate { kind, body })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitute each placeholder with its binding. Substitution is a
    /// single pass over the body, so binding values that themselves look
    /// like placeholder tokens are inserted verbatim, never re-expanded.
    pub fn render(&self, bindings: &Bindings) -> Result<String> {
        let mut slots: Vec<(usize, Placeholder)> = Vec::new();
        for &ph in self.kind.required() {
            let pos = self.body.find(ph.token()).expect("validated at construction");
            if bindings.get(ph).is_none() {
                return Err(Error::MissingPlaceholder {
                    name: ph.name().to_owned(),
                });
            }
            slots.push((pos, ph));
        }
        slots.sort_by_key(|(pos, _)| *pos);
        let mut out = String::with_capacity(self.body.len());
        let mut cursor = 0;
        for (pos, ph) in slots {
            out.push_str(&self.body[cursor..pos]);
            out.push_str(bindings.get(ph).expect("checked above"));
            cursor = pos + ph.token().len();
        }
        out.push_str(&self.body[cursor..]);
        Ok(out)
    }
}

/// Placeholder values for one render call.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: BTreeMap<Placeholder, String>,
}

impl Bindings {
    pub fn new() -> Bindings {
        Bindings::default()
    }

    pub fn set(mut self, ph: Placeholder, value: impl Into<String>) -> Bindings {
        self.values.insert(ph, value.into());
        self
    }

    pub fn get(&self, ph: Placeholder) -> Option<&str> {
        self.values.get(&ph).map(String::as_str)
    }
}

/// The three templates the pipeline runs with, defaulting to the built-in
/// bodies and overridable from files.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub query_gen: PromptTemplate,
    pub fact_check: PromptTemplate,
    pub fc_rag: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            query_gen: PromptTemplate::default_for(TemplateKind::QueryGen),
            fact_check: PromptTemplate::default_for(TemplateKind::FactCheck),
            fc_rag: PromptTemplate::default_for(TemplateKind::FcRag),
        }
    }
}

/// Extract the search query from query-generation output: the last
/// non-empty fenced code block, or failing that the last non-empty line.
pub fn parse_query(output: &str) -> Result<String> {
    let mut best: Option<&str> = None;
    let mut open_content: Option<usize> = None;
    let mut i = 0;
    while let Some(found) = output[i..].find("```") {
        let fence_at = i + found;
        let after_fence = fence_at + 3;
        match open_content {
            None => {
                // Skip the rest of the opening fence line (info string).
                let content_start = output[after_fence..]
                    .find('\n')
                    .map(|p| after_fence + p + 1)
                    .unwrap_or(output.len());
                open_content = Some(content_start);
                i = content_start;
            }
            Some(start) => {
                let content = output[start.min(fence_at)..fence_at].trim();
                if !content.is_empty() {
                    best = Some(content);
                }
                open_content = None;
                i = after_fence;
            }
        }
    }
    if let Some(q) = best {
        return Ok(q.to_owned());
    }
    output
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_owned)
        .ok_or(Error::EmptyOutput)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum VerdictLabel {
    Supported,
    NotSupported,
}

/// A parsed rater verdict, keeping the raw output for audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub label: VerdictLabel,
    pub raw: String,
}

/// Extract the verdict from rater output. The last complete `[...]` span
/// is the verdict slot; its content is matched against the two labels
/// after trimming, lowercasing, and collapsing `_` and runs of whitespace.
/// Anything else is unparseable, never a panic.
pub fn parse_verdict(output: &str) -> Result<Verdict> {
    let mut last_span: Option<&str> = None;
    let mut open: Option<usize> = None;
    for (i, c) in output.char_indices() {
        match c {
            '[' => open = Some(i + 1),
            ']' => {
                if let Some(s) = open.take() {
                    last_span = Some(&output[s..i]);
                }
            }
            _ => {}
        }
    }
    if let Some(span) = last_span {
        let lowered = span.trim().to_lowercase().replace('_', " ");
        let norm = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
        let label = match norm.as_str() {
            "supported" => Some(VerdictLabel::Supported),
            "not supported" => Some(VerdictLabel::NotSupported),
            _ => None,
        };
        if let Some(label) = label {
            return Ok(Verdict {
                label,
                raw: output.to_owned(),
            });
        }
    }
    let tail: String = {
        let chars: Vec<char> = output.chars().collect();
        let from = chars.len().saturating_sub(80);
        chars[from..].iter().collect()
    };
    Err(Error::UnparseableVerdict { tail })
}

fn mcq_patterns() -> &'static [Regex] {
    static PATTERNS: OnceLock<Vec<Regex>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            // (E)
            r"\(([A-Z])\)",
            // (option E), models often bury the letter like this
            r"\((?i:option)\s+([A-Z])\)",
            // the answer is E / answer is (E)
            r"\b(?i:answer\s+is)\s*:?\s*\(?([A-Z])\b\)?",
            // Answer: E / **Answer**: (E)
            r"\b(?i:answer)\**\s*:\s*\**\s*\(?([A-Z])\b\)?",
            // a line starting "E) ..." (optionally bulleted)
            r"(?m)^\s*(?:[*+-]\s+)?([A-Z])\)",
        ]
        .iter()
        .map(|p| Regex::new(p).expect("static pattern"))
        .collect()
    })
}

/// Extract the selected option letter from answer text.
///
/// Every occurrence of the recognized shapes (`(E)`, `(option E)`,
/// `answer is E`, `Answer: E`, a line starting `E)`) whose letter is in
/// `valid` is a candidate, and the last candidate in the text wins:
/// models restate their choice at the end, after enumerating the others.
pub fn parse_mcq_answer(output: &str, valid: &[char]) -> Result<char> {
    let mut best: Option<(usize, char)> = None;
    for re in mcq_patterns() {
        for caps in re.captures_iter(output) {
            let m = caps.get(1).expect("every pattern has one group");
            let letter = m.as_str().chars().next().expect("single letter group");
            if !valid.contains(&letter) {
                continue;
            }
            if best.map_or(true, |(pos, _)| m.start() >= pos) {
                best = Some((m.start(), letter));
            }
        }
    }
    best.map(|(_, letter)| letter).ok_or(Error::NoAnswer)
}
