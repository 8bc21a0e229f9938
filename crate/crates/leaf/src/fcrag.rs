//! Fact-check-then-retrieve answer regeneration.
//!
//! One item runs as a loop: answer the question, fact-check the answer
//! sentence by sentence, and if any sentence fails, regenerate with the
//! evidence that contradicted the failed sentences pasted into the
//! KNOWLEDGE block. The loop stops on a clean fact check or after
//! `max_rounds` rounds. Rounds of one item are strictly sequential
//! (each consumes the previous report); distinct items parallelize.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Retriever;
use crate::error::{Error, Result};
use crate::eval::McqItem;
use crate::factcheck::{format_knowledge, FactCheckReport, FactChecker, GenSettings};
use crate::gateway::{Backend, GenRequest};
use crate::prompt::{parse_mcq_answer, Bindings, Placeholder, PromptSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub response: String,
    /// Parsed choice letter, absent when the response names no option.
    pub answer: Option<char>,
    pub report: FactCheckReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// The last round's fact check scored 1.0.
    Passed,
    /// `max_rounds` rounds ran without a clean fact check.
    BudgetExhausted,
    /// Budget ran out and no round ever produced a parseable answer.
    NoAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcRagTrace {
    pub item: McqItem,
    pub rounds: Vec<Round>,
    /// The last round's parsed answer. On budget exhaustion this is the
    /// most evidence-informed attempt, not the best-scoring one.
    pub final_answer: Option<char>,
    pub stop_reason: StopReason,
}

/// What the KNOWLEDGE block of round 1 holds. Later rounds always use
/// the failed evidence of the previous round's report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstRoundKnowledge {
    /// `N/A`: the model answers from its own knowledge first.
    Empty,
    /// Retrieve with the raw question text, the conventional
    /// retrieve-then-answer baseline.
    RetrieveQuestion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcRagConfig {
    pub max_rounds: usize,
    pub first_round: FirstRoundKnowledge,
    /// Passages for `RetrieveQuestion`; unused with `Empty`.
    pub top_k: usize,
    pub round1_temperature: f64,
    /// Rounds after the first; 0.0 keeps regeneration deterministic.
    pub regen_temperature: f64,
}

impl Default for FcRagConfig {
    fn default() -> Self {
        FcRagConfig {
            max_rounds: 3,
            first_round: FirstRoundKnowledge::Empty,
            top_k: 3,
            round1_temperature: 0.0,
            regen_temperature: 0.0,
        }
    }
}

pub struct FcRagRunner<'a> {
    generator: &'a dyn Backend,
    checker: &'a FactChecker<'a>,
    retriever: &'a dyn Retriever,
    prompts: &'a PromptSet,
    gen: GenSettings,
    config: FcRagConfig,
}

impl<'a> FcRagRunner<'a> {
    pub fn new(
        generator: &'a dyn Backend,
        checker: &'a FactChecker<'a>,
        retriever: &'a dyn Retriever,
        prompts: &'a PromptSet,
        gen: GenSettings,
        config: FcRagConfig,
    ) -> Result<FcRagRunner<'a>> {
        if config.max_rounds == 0 {
            return Err(Error::InvalidRequest {
                detail: "max_rounds must be at least 1".to_owned(),
            });
        }
        Ok(FcRagRunner {
            generator,
            checker,
            retriever,
            prompts,
            gen,
            config,
        })
    }

    fn answer_prompt(&self, item: &McqItem, knowledge: &str) -> String {
        self.prompts
            .fc_rag
            .render(
                &Bindings::new()
                    .set(Placeholder::Knowledge, knowledge)
                    .set(Placeholder::Question, item.question.as_str())
                    .set(Placeholder::Options, item.options_line()),
            )
            .expect("all answer placeholders bound")
    }

    fn first_round_knowledge(&self, item: &McqItem) -> String {
        match self.config.first_round {
            FirstRoundKnowledge::Empty => "N/A".to_owned(),
            FirstRoundKnowledge::RetrieveQuestion => {
                format_knowledge(&self.retriever.retrieve(&item.question, self.config.top_k))
            }
        }
    }

    /// Run the full loop for one item. Rater and generator failures
    /// surface as errors; an unparseable answer does not (the round is
    /// recorded and the loop continues).
    pub fn run(&self, item: &McqItem) -> Result<FcRagTrace> {
        item.validate()?;
        let context = item.context_string();
        let letters = item.letters();
        let mut knowledge = self.first_round_knowledge(item);
        let mut rounds: Vec<Round> = Vec::new();

        for round_index in 0..self.config.max_rounds {
            let temperature = if round_index == 0 {
                self.config.round1_temperature
            } else {
                self.config.regen_temperature
            };
            let request = GenRequest::user(
                &self.gen.model,
                self.answer_prompt(item, &knowledge),
                temperature,
                1,
                self.gen.max_tokens,
            );
            let response = self
                .generator
                .generate(&request)?
                .texts
                .into_iter()
                .next()
                .unwrap_or_default();
            let answer = parse_mcq_answer(&response, &letters).ok();
            let report = self.checker.check_response(&response, &context)?;
            let passed = report.passed();
            knowledge = {
                let failed = report.failed_evidence();
                if failed.is_empty() {
                    "N/A".to_owned()
                } else {
                    format_knowledge(&failed)
                }
            };
            rounds.push(Round {
                response,
                answer,
                report,
            });
            if passed {
                break;
            }
        }

        let passed = rounds.last().is_some_and(|r| r.report.passed());
        let stop_reason = if passed {
            StopReason::Passed
        } else if rounds.iter().all(|r| r.answer.is_none()) {
            StopReason::NoAnswer
        } else {
            StopReason::BudgetExhausted
        };
        Ok(FcRagTrace {
            item: item.clone(),
            final_answer: rounds.last().and_then(|r| r.answer),
            rounds,
            stop_reason,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub total: usize,
    pub baseline_correct: usize,
    pub fcrag_correct: usize,
    pub baseline_accuracy: f64,
    pub fcrag_accuracy: f64,
    /// `fcrag_accuracy - baseline_accuracy`, computed from the integer
    /// counts so flipping k of n answers yields exactly k/n.
    pub delta: f64,
}

/// Accuracy of a baseline run against a regeneration run over the same
/// items. Both runs must cover exactly the same question ids; `gold`
/// must name every id.
pub fn compare_runs(
    baseline: &[FcRagTrace],
    fcrag: &[FcRagTrace],
    gold: &BTreeMap<String, char>,
) -> Result<DeltaReport> {
    if baseline.is_empty() {
        return Err(Error::EmptyInput {
            what: "baseline traces".to_owned(),
        });
    }
    let answers = |traces: &[FcRagTrace], run: &str| -> Result<BTreeMap<String, Option<char>>> {
        let mut out = BTreeMap::new();
        for t in traces {
            if out.insert(t.item.id.clone(), t.final_answer).is_some() {
                return Err(Error::RunMismatch {
                    detail: format!("{run} run repeats item {:?}", t.item.id),
                });
            }
        }
        Ok(out)
    };
    let base = answers(baseline, "baseline")?;
    let regen = answers(fcrag, "fc-rag")?;
    if base.len() != regen.len() || !base.keys().eq(regen.keys()) {
        let missing: Vec<&str> = base
            .keys()
            .filter(|id| !regen.contains_key(*id))
            .chain(regen.keys().filter(|id| !base.contains_key(*id)))
            .map(|s| s.as_str())
            .collect();
        return Err(Error::RunMismatch {
            detail: format!("runs cover different items: {missing:?}"),
        });
    }
    for id in base.keys() {
        if !gold.contains_key(id) {
            return Err(Error::UnknownId { id: id.clone() });
        }
    }
    let correct = |answers: &BTreeMap<String, Option<char>>| -> usize {
        answers
            .iter()
            .filter(|(id, answer)| **answer == Some(gold[id.as_str()]))
            .count()
    };
    let total = base.len();
    let baseline_correct = correct(&base);
    let fcrag_correct = correct(&regen);
    Ok(DeltaReport {
        total,
        baseline_correct,
        fcrag_correct,
        baseline_accuracy: baseline_correct as f64 / total as f64,
        fcrag_accuracy: fcrag_correct as f64 / total as f64,
        delta: (fcrag_correct as f64 - baseline_correct as f64) / total as f64,
    })
}
