//! The per-sentence fact-check loop and response-level scoring.
//!
//! A response is split into sentences, and each sentence goes through the
//! same loop: ask the rater model for a search query given what we know so
//! far, retrieve passages, repeat up to `max_queries` times with the
//! accumulated knowledge, then ask the rater for a final verdict against
//! that knowledge. A sentence whose verdict cannot be parsed, or whose
//! rater call fails after retries, counts as not supported rather than
//! aborting the run: an unverifiable claim is a failed claim.
//!
//! The response score is the fraction of supported sentences. A response
//! passes only at exactly 1.0.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{RetrievedDoc, Retriever};
use crate::error::{Error, Result};
use crate::gateway::{Backend, GenRequest};
use crate::prompt::{Bindings, Placeholder, PromptSet, VerdictLabel};
use crate::sentences::split_sentences;

/// Sampling settings for one model role (rater or answer generator).
#[derive(Debug, Clone, PartialEq)]
pub struct GenSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SentenceLabel {
    Supported,
    NotSupported,
    /// Rater output had no verdict, or the rater call failed. Scored the
    /// same as [`SentenceLabel::NotSupported`].
    Unparseable,
}

/// The audit trail for one checked sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceVerdict {
    pub sentence: String,
    pub label: SentenceLabel,
    /// Queries actually issued, in order. Iterations whose query came back
    /// empty are skipped and leave no entry.
    pub queries: Vec<String>,
    /// Evidence accumulated across iterations, deduplicated by doc id, in
    /// first-seen order.
    pub evidence: Vec<RetrievedDoc>,
    /// Raw rater output for the final verdict, or the error that replaced
    /// it.
    pub rater_raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheckReport {
    pub context: String,
    pub response: String,
    pub verdicts: Vec<SentenceVerdict>,
    /// supported / total, in [0, 1].
    pub leaf_score: f64,
}

impl FactCheckReport {
    pub fn total(&self) -> usize {
        self.verdicts.len()
    }

    pub fn supported_count(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|v| v.label == SentenceLabel::Supported)
            .count()
    }

    /// A response passes only when every sentence is supported.
    pub fn passed(&self) -> bool {
        self.leaf_score == 1.0
    }

    /// Evidence attached to the sentences that did not pass, deduplicated
    /// by doc id in first-seen order. This is the knowledge a
    /// regeneration round gets to see.
    pub fn failed_evidence(&self) -> Vec<RetrievedDoc> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for v in &self.verdicts {
            if v.label == SentenceLabel::Supported {
                continue;
            }
            for d in &v.evidence {
                if seen.insert(d.doc_id.clone()) {
                    out.push(d.clone());
                }
            }
        }
        out
    }
}

/// supported / total. Exact for the small counts involved; `12/16` is
/// exactly `0.75`. An empty total yields 0 (callers reject empty
/// responses before scoring).
pub fn leaf_score(supported: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    supported as f64 / total as f64
}

/// Score a verdict list the way [`FactChecker::check_response`] does:
/// `Supported` counts, everything else (including `Unparseable`) does
/// not.
pub fn score_verdicts(verdicts: &[SentenceVerdict]) -> f64 {
    let supported = verdicts
        .iter()
        .filter(|v| v.label == SentenceLabel::Supported)
        .count();
    leaf_score(supported, verdicts.len())
}

/// Render retrieved passages as the numbered KNOWLEDGE block: one
/// `(i). text` line per passage, or `N/A` when there is nothing yet.
/// Appending evidence keeps the previous block as a prefix, which is what
/// makes the per-sentence loop monotone.
pub fn format_knowledge(docs: &[RetrievedDoc]) -> String {
    if docs.is_empty() {
        return "N/A".to_owned();
    }
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("({}). {}", i + 1, d.snippet))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactCheckConfig {
    /// Query-generation iterations per sentence.
    pub max_queries: usize,
    /// Passages retrieved per query.
    pub top_k: usize,
}

impl Default for FactCheckConfig {
    fn default() -> Self {
        FactCheckConfig {
            max_queries: 3,
            top_k: 3,
        }
    }
}

pub struct FactChecker<'a> {
    retriever: &'a dyn Retriever,
    rater: &'a dyn Backend,
    prompts: &'a PromptSet,
    config: FactCheckConfig,
    rater_gen: GenSettings,
}

impl<'a> FactChecker<'a> {
    pub fn new(
        retriever: &'a dyn Retriever,
        rater: &'a dyn Backend,
        prompts: &'a PromptSet,
        config: FactCheckConfig,
        rater_gen: GenSettings,
    ) -> FactChecker<'a> {
        FactChecker {
            retriever,
            rater,
            prompts,
            config,
            rater_gen,
        }
    }

    fn rater_request(&self, prompt: String) -> GenRequest {
        GenRequest::user(
            &self.rater_gen.model,
            prompt,
            self.rater_gen.temperature,
            1,
            self.rater_gen.max_tokens,
        )
    }

    fn unparseable(
        sentence: &str,
        queries: Vec<String>,
        evidence: Vec<RetrievedDoc>,
        rater_raw: String,
    ) -> SentenceVerdict {
        SentenceVerdict {
            sentence: sentence.to_owned(),
            label: SentenceLabel::Unparseable,
            queries,
            evidence,
            rater_raw,
        }
    }

    /// Run the full query / retrieve / rate loop for one sentence.
    /// Infallible by design: rater failures become Unparseable verdicts.
    pub fn check_sentence(&self, sentence: &str, context: &str) -> SentenceVerdict {
        let mut queries: Vec<String> = Vec::new();
        let mut evidence: Vec<RetrievedDoc> = Vec::new();
        let mut seen: BTreeSet<String> = BTreeSet::new();

        for _ in 0..self.config.max_queries {
            let prompt = self
                .prompts
                .query_gen
                .render(
                    &Bindings::new()
                        .set(Placeholder::Knowledge, format_knowledge(&evidence))
                        .set(Placeholder::Context, context)
                        .set(Placeholder::Statement, sentence),
                )
                .expect("all query placeholders bound");
            let text = match self.rater.generate(&self.rater_request(prompt)) {
                Ok(resp) => resp.texts.into_iter().next().unwrap_or_default(),
                Err(e) => {
                    return Self::unparseable(
                        sentence,
                        queries,
                        evidence,
                        format!("query generation failed: {e}"),
                    )
                }
            };
            match crate::prompt::parse_query(&text) {
                Ok(query) => {
                    for doc in self.retriever.retrieve(&query, self.config.top_k) {
                        if seen.insert(doc.doc_id.clone()) {
                            evidence.push(doc);
                        }
                    }
                    queries.push(query);
                }
                // Blank query output: nothing to search, move on.
                Err(_) => continue,
            }
        }

        let prompt = self
            .prompts
            .fact_check
            .render(
                &Bindings::new()
                    .set(Placeholder::Knowledge, format_knowledge(&evidence))
                    .set(Placeholder::Context, context)
                    .set(Placeholder::Statement, sentence),
            )
            .expect("all fact-check placeholders bound");
        match self.rater.generate(&self.rater_request(prompt)) {
            Err(e) => Self::unparseable(
                sentence,
                queries,
                evidence,
                format!("verdict generation failed: {e}"),
            ),
            Ok(resp) => {
                let text = resp.texts.into_iter().next().unwrap_or_default();
                match crate::prompt::parse_verdict(&text) {
                    Ok(verdict) => SentenceVerdict {
                        sentence: sentence.to_owned(),
                        label: match verdict.label {
                            VerdictLabel::Supported => SentenceLabel::Supported,
                            VerdictLabel::NotSupported => SentenceLabel::NotSupported,
                        },
                        queries,
                        evidence,
                        rater_raw: verdict.raw,
                    },
                    Err(_) => Self::unparseable(sentence, queries, evidence, text),
                }
            }
        }
    }

    /// Check every sentence of `response` and score the whole thing.
    /// Sentences are checked in order; a response with no sentences is an
    /// error because its score would be meaningless.
    pub fn check_response(&self, response: &str, context: &str) -> Result<FactCheckReport> {
        let sentences = split_sentences(response);
        if sentences.is_empty() {
            return Err(Error::EmptyResponse);
        }
        let verdicts: Vec<SentenceVerdict> = sentences
            .iter()
            .map(|s| self.check_sentence(s, context))
            .collect();
        let score = score_verdicts(&verdicts);
        Ok(FactCheckReport {
            context: context.to_owned(),
            response: response.to_owned(),
            verdicts,
            leaf_score: score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Bm25Index, Bm25Params, Document};
    use crate::gateway::{GenResponse, MockBackend, Usage};
    use std::sync::Mutex;

    fn corpus() -> Bm25Index {
        let docs = vec![
            Document {
                id: "doc_scfe".to_owned(),
                title: "SCFE".to_owned(),
                text: "Slipped capital femoral epiphysis causes hip knee and groin pain in obese adolescents".to_owned(),
            },
            Document {
                id: "doc_synovitis".to_owned(),
                title: "Synovitis".to_owned(),
                text: "Transient synovitis of the hip affects young children after viral illness".to_owned(),
            },
            Document {
                id: "doc_lcp".to_owned(),
                title: "LCP".to_owned(),
                text: "Legg Calve Perthes disease presents with hip pain and limp in school age children".to_owned(),
            },
        ];
        Bm25Index::build(docs, Bm25Params::default()).unwrap()
    }

    const QUERY_FIXTURE: (&str, &str) = (
        "ONE Google Search query",
        "```\nhip pain adolescents epiphysis\n```",
    );

    fn settings() -> GenSettings {
        GenSettings {
            model: "test-model".to_owned(),
            temperature: 0.0,
            max_tokens: 256,
        }
    }

    fn checker<'a>(
        index: &'a Bm25Index,
        rater: &'a MockBackend,
        prompts: &'a PromptSet,
        config: FactCheckConfig,
    ) -> FactChecker<'a> {
        FactChecker::new(index, rater, prompts, config, settings())
    }

    #[test]
    fn always_supported_rater_yields_supported_with_all_query_records() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = MockBackend::from_records(vec![
            QUERY_FIXTURE,
            ("square brackets", "reasoning...\nFinal answer: [Supported]"),
        ]
        .into_iter()
        .map(|(m, r)| (m, vec![r]))
        .collect());
        let fc = checker(&index, &rater, &prompts, FactCheckConfig::default());
        let v = fc.check_sentence("The hip pain suggests epiphysis slippage.", "context");
        assert_eq!(v.label, SentenceLabel::Supported);
        assert_eq!(v.queries.len(), 3);
        assert!(!v.evidence.is_empty());
        assert!(v.rater_raw.contains("[Supported]"));
    }

    #[test]
    fn evidence_is_deduplicated_across_iterations() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = MockBackend::from_records(vec![
            ("ONE Google Search query", vec!["```\nhip pain\n```"]),
            ("square brackets", vec!["[Supported]"]),
        ]);
        let fc = checker(&index, &rater, &prompts, FactCheckConfig::default());
        let v = fc.check_sentence("sentence", "context");
        let mut ids: Vec<&str> = v.evidence.iter().map(|d| d.doc_id.as_str()).collect();
        let before = ids.len();
        ids.dedup();
        assert_eq!(ids.len(), before, "evidence contains duplicates");
        // Same query three times still accumulates each doc once.
        assert!(before <= 3);
    }

    #[test]
    fn no_evidence_path_rates_against_na_knowledge() {
        let index = corpus();
        let prompts = PromptSet::default();
        // Query generation returns blank output every time, so no
        // retrieval happens and the verdict runs with KNOWLEDGE: N/A.
        let rater = MockBackend::from_records(vec![
            ("ONE Google Search query", vec![""]),
            ("(?s)square brackets.*KNOWLEDGE:\nN/A", vec!["[Not Supported]"]),
        ]);
        let fc = checker(&index, &rater, &prompts, FactCheckConfig::default());
        let v = fc.check_sentence("unfindable claim", "context");
        assert_eq!(v.label, SentenceLabel::NotSupported);
        assert!(v.queries.is_empty());
        assert!(v.evidence.is_empty());
    }

    #[test]
    fn backend_error_becomes_unparseable_not_a_crash() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = MockBackend::from_records::<&str>(vec![]); // every call misses
        let fc = checker(&index, &rater, &prompts, FactCheckConfig::default());
        let v = fc.check_sentence("anything", "context");
        assert_eq!(v.label, SentenceLabel::Unparseable);
        assert!(v.rater_raw.contains("query generation failed"));
    }

    #[test]
    fn gibberish_verdict_becomes_unparseable() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = MockBackend::from_records(vec![
            QUERY_FIXTURE,
            ("square brackets", "I cannot decide."),
        ]
        .into_iter()
        .map(|(m, r)| (m, vec![r]))
        .collect());
        let fc = checker(&index, &rater, &prompts, FactCheckConfig::default());
        let v = fc.check_sentence("sentence", "context");
        assert_eq!(v.label, SentenceLabel::Unparseable);
        assert_eq!(v.rater_raw, "I cannot decide.");
    }

    /// Rater that scripts verdicts per statement text and records every
    /// prompt it sees.
    struct ScriptedRater {
        verdicts: Vec<(&'static str, &'static str)>,
        prompts_seen: Mutex<Vec<String>>,
    }

    impl Backend for ScriptedRater {
        fn id(&self) -> &str {
            "scripted"
        }
        fn generate(&self, req: &GenRequest) -> crate::Result<GenResponse> {
            let prompt = req.flat_text();
            self.prompts_seen.lock().unwrap().push(prompt.clone());
            let text = if prompt.contains("ONE Google Search query") {
                "```\nhip pain\n```".to_owned()
            } else {
                let statement = prompt.split("STATEMENT:\n").nth(1).unwrap_or("").trim();
                let verdict = self
                    .verdicts
                    .iter()
                    .find(|(s, _)| statement.starts_with(s))
                    .map(|(_, v)| *v)
                    .unwrap_or("[Supported]");
                format!("Final answer: {verdict}")
            };
            Ok(GenResponse {
                texts: vec![text],
                backend_id: "scripted".to_owned(),
                usage: Usage::default(),
            })
        }
    }

    #[test]
    fn three_of_four_supported_scores_three_quarters() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = ScriptedRater {
            verdicts: vec![("Claim two", "[Not Supported]")],
            prompts_seen: Mutex::new(Vec::new()),
        };
        let fc = FactChecker::new(
            &index,
            &rater,
            &prompts,
            FactCheckConfig {
                max_queries: 1,
                top_k: 3,
            },
            settings(),
        );
        let report = fc
            .check_response(
                "Claim one is fine. Claim two is wrong. Claim three is fine. Claim four is fine.",
                "context",
            )
            .unwrap();
        assert_eq!(report.total(), 4);
        assert_eq!(report.supported_count(), 3);
        assert_eq!(report.leaf_score, 0.75);
        assert!(!report.passed());
    }

    #[test]
    fn all_supported_passes_with_score_one() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = ScriptedRater {
            verdicts: vec![],
            prompts_seen: Mutex::new(Vec::new()),
        };
        let fc = FactChecker::new(
            &index,
            &rater,
            &prompts,
            FactCheckConfig {
                max_queries: 1,
                top_k: 3,
            },
            settings(),
        );
        let report = fc.check_response("One is true. Two is true.", "context").unwrap();
        assert_eq!(report.leaf_score, 1.0);
        assert!(report.passed());
        assert!(report.failed_evidence().is_empty());
    }

    #[test]
    fn seven_of_eleven_is_exact() {
        assert_eq!(leaf_score(7, 11), 7.0 / 11.0);
        assert_eq!(leaf_score(7, 11) * 11.0, 7.0);
        assert_eq!(leaf_score(0, 5), 0.0);
        assert_eq!(leaf_score(5, 5), 1.0);
        assert_eq!(leaf_score(0, 0), 0.0);
    }

    #[test]
    fn empty_response_is_an_error() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = MockBackend::from_records::<&str>(vec![]);
        let fc = checker(&index, &rater, &prompts, FactCheckConfig::default());
        assert!(matches!(
            fc.check_response("", "context"),
            Err(Error::EmptyResponse)
        ));
        assert!(matches!(
            fc.check_response("   \n \n", "context"),
            Err(Error::EmptyResponse)
        ));
    }

    #[test]
    fn failed_evidence_collects_only_failing_sentences_deduplicated() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = ScriptedRater {
            verdicts: vec![
                ("Bad claim one", "[Not Supported]"),
                ("Bad claim two", "[Not Supported]"),
            ],
            prompts_seen: Mutex::new(Vec::new()),
        };
        let fc = FactChecker::new(
            &index,
            &rater,
            &prompts,
            FactCheckConfig {
                max_queries: 1,
                top_k: 3,
            },
            settings(),
        );
        let report = fc
            .check_response(
                "Good claim stays. Bad claim one here. Bad claim two here.",
                "context",
            )
            .unwrap();
        let failed = report.failed_evidence();
        // Both failing sentences retrieved the same docs; dedup leaves
        // each doc once, and every doc comes from the corpus.
        let mut ids: Vec<&str> = failed.iter().map(|d| d.doc_id.as_str()).collect();
        let len_before = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), len_before);
        for id in ids {
            assert!(index.documents().iter().any(|d| d.id == id));
        }
        assert!(!failed.is_empty());
    }

    #[test]
    fn knowledge_blocks_grow_monotonically_across_iterations() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = ScriptedRater {
            verdicts: vec![],
            prompts_seen: Mutex::new(Vec::new()),
        };
        let fc = FactChecker::new(
            &index,
            &rater,
            &prompts,
            FactCheckConfig {
                max_queries: 3,
                top_k: 1,
            },
            settings(),
        );
        fc.check_sentence("hip pain sentence", "context");
        let seen = rater.prompts_seen.lock().unwrap();
        let knowledge_blocks: Vec<String> = seen
            .iter()
            .filter(|p| p.contains("ONE Google Search query"))
            .map(|p| {
                p.split("KNOWLEDGE:\n")
                    .nth(1)
                    .unwrap()
                    .split("\n\nCONTEXT:")
                    .next()
                    .unwrap()
                    .to_owned()
            })
            .collect();
        assert_eq!(knowledge_blocks.len(), 3);
        assert_eq!(knowledge_blocks[0], "N/A");
        for window in knowledge_blocks.windows(2) {
            let (prev, next) = (&window[0], &window[1]);
            if prev != "N/A" {
                assert!(
                    next.starts_with(prev.as_str()),
                    "knowledge shrank between iterations:\n{prev}\nvs\n{next}"
                );
            }
        }
    }

    #[test]
    fn format_knowledge_numbers_passages() {
        assert_eq!(format_knowledge(&[]), "N/A");
        let docs = vec![
            RetrievedDoc {
                doc_id: "a".to_owned(),
                score: 1.0,
                snippet: "first passage".to_owned(),
            },
            RetrievedDoc {
                doc_id: "b".to_owned(),
                score: 0.5,
                snippet: "second passage".to_owned(),
            },
        ];
        assert_eq!(
            format_knowledge(&docs),
            "(1). first passage\n(2). second passage"
        );
        // Prefix property: adding a passage never rewrites earlier lines.
        let longer = format_knowledge(&docs);
        let shorter = format_knowledge(&docs[..1]);
        assert!(longer.starts_with(&shorter));
    }

    #[test]
    fn verdict_order_follows_sentence_order() {
        let index = corpus();
        let prompts = PromptSet::default();
        let rater = ScriptedRater {
            verdicts: vec![("Bravo", "[Not Supported]")],
            prompts_seen: Mutex::new(Vec::new()),
        };
        let fc = FactChecker::new(
            &index,
            &rater,
            &prompts,
            FactCheckConfig {
                max_queries: 1,
                top_k: 1,
            },
            settings(),
        );
        let a = fc.check_response("Alpha one. Bravo two. Charlie three.", "ctx").unwrap();
        let labels: Vec<SentenceLabel> = a.verdicts.iter().map(|v| v.label).collect();
        assert_eq!(
            labels,
            vec![
                SentenceLabel::Supported,
                SentenceLabel::NotSupported,
                SentenceLabel::Supported
            ]
        );
        // Permuting the sentences permutes the verdicts with them.
        let b = fc.check_response("Bravo two. Charlie three. Alpha one.", "ctx").unwrap();
        let labels_b: Vec<SentenceLabel> = b.verdicts.iter().map(|v| v.label).collect();
        assert_eq!(
            labels_b,
            vec![
                SentenceLabel::NotSupported,
                SentenceLabel::Supported,
                SentenceLabel::Supported
            ]
        );
        assert_eq!(a.leaf_score, b.leaf_score);
    }
}
