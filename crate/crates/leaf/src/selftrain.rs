//! Training-data construction from fact-check scores.
//!
//! Two exports from the same scored-sample pool: an SFT set keeping only
//! responses whose fact check passed outright (score exactly 1.0), and
//! preference pairs taking each prompt's best sample against its worst
//! for SimPO. Both are pure batch transformations with output sorted by
//! prompt id so reruns are byte-identical.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sampled response with its fact-check score. `sample_index` is
/// the sampling slot (0-based) and is unique within a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub prompt_id: String,
    pub response: String,
    pub leaf_score: f64,
    pub sample_index: u32,
}

impl ScoredResponse {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_id.is_empty() {
            return Err(Error::InvalidItem {
                id: String::new(),
                detail: "empty prompt_id".to_owned(),
            });
        }
        if !self.leaf_score.is_finite() || !(0.0..=1.0).contains(&self.leaf_score) {
            return Err(Error::InvalidScore {
                detail: format!(
                    "leaf_score {} of {}#{} is outside [0, 1]",
                    self.leaf_score, self.prompt_id, self.sample_index
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub prompt: String,
    pub chosen: ScoredResponse,
    pub rejected: ScoredResponse,
}

/// The flat JSONL shape preference-tuning trainers ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWire {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

impl PreferencePair {
    pub fn to_wire(&self) -> PairWire {
        PairWire {
            prompt: self.prompt.clone(),
            chosen: self.chosen.response.clone(),
            rejected: self.rejected.response.clone(),
            chosen_score: self.chosen.leaf_score,
            rejected_score: self.rejected.leaf_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPolicy {
    /// Minimum chosen-minus-rejected score gap; prompts under it are
    /// skipped. 0 skips only zero-gap prompts.
    pub min_gap: f64,
}

impl Default for PairPolicy {
    fn default() -> Self {
        PairPolicy { min_gap: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBuild {
    /// Sorted by prompt id, one pair per prompt.
    pub pairs: Vec<PreferencePair>,
    /// Prompts with fewer than two samples.
    pub skipped_single: usize,
    /// Prompts whose samples all share one score.
    pub skipped_no_gap: usize,
    /// Prompts whose gap is positive but under `min_gap`.
    pub skipped_below_gap: usize,
}

/// Group by prompt, validating scores and per-prompt sample_index
/// uniqueness, and resolving every prompt_id against `prompts`.
fn group_by_prompt<'a>(
    scored: &'a [ScoredResponse],
    prompts: &BTreeMap<String, String>,
) -> Result<BTreeMap<&'a str, Vec<&'a ScoredResponse>>> {
    let mut groups: BTreeMap<&str, Vec<&ScoredResponse>> = BTreeMap::new();
    let mut seen: BTreeSet<(&str, u32)> = BTreeSet::new();
    for s in scored {
        s.validate()?;
        if !prompts.contains_key(&s.prompt_id) {
            return Err(Error::UnknownId {
                id: s.prompt_id.clone(),
            });
        }
        if !seen.insert((&s.prompt_id, s.sample_index)) {
            return Err(Error::InvalidItem {
                id: s.prompt_id.clone(),
                detail: format!("sample_index {} appears twice", s.sample_index),
            });
        }
        groups.entry(&s.prompt_id).or_default().push(s);
    }
    Ok(groups)
}

/// SFT records for every response that passed its fact check. Prompts
/// with no passing response contribute nothing; an empty result is not
/// an error. Ordered by (prompt_id, sample_index).
pub fn build_sft(
    scored: &[ScoredResponse],
    prompts: &BTreeMap<String, String>,
) -> Result<Vec<SftRecord>> {
    let groups = group_by_prompt(scored, prompts)?;
    let mut out = Vec::new();
    for (prompt_id, mut samples) in groups {
        samples.sort_by_key(|s| s.sample_index);
        for s in samples {
            if s.leaf_score == 1.0 {
                out.push(SftRecord {
                    prompt: prompts[prompt_id].clone(),
                    response: s.response.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// One preference pair per prompt: highest score as chosen, lowest as
/// rejected, score ties going to the earlier sample on both sides.
/// Prompts that cannot yield a strict preference are counted, not
/// emitted, so every returned pair has chosen.leaf_score strictly above
/// rejected.leaf_score.
pub fn build_pairs(
    scored: &[ScoredResponse],
    prompts: &BTreeMap<String, String>,
    policy: PairPolicy,
) -> Result<PairBuild> {
    if !policy.min_gap.is_finite() || policy.min_gap < 0.0 {
        return Err(Error::InvalidRequest {
            detail: format!("min_gap {} must be finite and non-negative", policy.min_gap),
        });
    }
    let groups = group_by_prompt(scored, prompts)?;
    let mut build = PairBuild {
        pairs: Vec::new(),
        skipped_single: 0,
        skipped_no_gap: 0,
        skipped_below_gap: 0,
    };
    for (prompt_id, mut samples) in groups {
        if samples.len() < 2 {
            build.skipped_single += 1;
            continue;
        }
        // Index order first, so the strict comparisons below hand ties
        // to the earlier sample.
        samples.sort_by_key(|s| s.sample_index);
        let mut chosen = samples[0];
        let mut rejected = samples[0];
        for s in &samples[1..] {
            if s.leaf_score > chosen.leaf_score {
                chosen = s;
            }
            if s.leaf_score < rejected.leaf_score {
                rejected = s;
            }
        }
        let gap = chosen.leaf_score - rejected.leaf_score;
        if gap == 0.0 {
            build.skipped_no_gap += 1;
            continue;
        }
        if gap < policy.min_gap {
            build.skipped_below_gap += 1;
            continue;
        }
        build.pairs.push(PreferencePair {
            prompt_id: prompt_id.to_owned(),
            prompt: prompts[prompt_id].clone(),
            chosen: chosen.clone(),
            rejected: rejected.clone(),
        });
    }
    Ok(build)
}

/// Mean chosen-minus-rejected gap over a pair set, the summary statistic
/// for how much ranking signal a cohort carries.
pub fn mean_score_gap(pairs: &[PreferencePair]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| p.chosen.leaf_score - p.rejected.leaf_score)
        .sum();
    Some(sum / pairs.len() as f64)
}
