//! Length-normalized preference-objective numerics.
//!
//! Operates on exogenous per-token log-probabilities; no model runs
//! here. A sequence's reward is its mean token log-probability scaled
//! by `beta`, a pair's loss is the negative log-sigmoid of the reward
//! gap minus the target margin `gamma`, and the batch loss is the mean
//! over pairs. Gradients are analytic, with a finite-difference checker
//! for independent verification. Everything is a pure function of the
//! inputs; stability comes from the standard softplus and two-branch
//! sigmoid forms rather than clamping.

use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token log-probabilities (nats) of one sequence, each finite and
/// non-positive, at least one token.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqLogProbs {
    logps: Vec<f64>,
}

impl SeqLogProbs {
    pub fn new(logps: Vec<f64>) -> Result<SeqLogProbs> {
        if logps.is_empty() {
            return Err(Error::InvalidLogProbs {
                detail: "sequence has no tokens".to_owned(),
            });
        }
        for (i, lp) in logps.iter().enumerate() {
            if !lp.is_finite() || *lp > 0.0 {
                return Err(Error::InvalidLogProbs {
                    detail: format!("entry {i} is {lp}, want finite and <= 0"),
                });
            }
        }
        Ok(SeqLogProbs { logps })
    }

    pub fn len(&self) -> usize {
        self.logps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logps.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.logps
    }

    fn sum(&self) -> f64 {
        self.logps.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpoParams {
    /// Reward scale, > 0.
    pub beta: f64,
    /// Target reward margin, >= 0.
    pub gamma: f64,
}

impl SimpoParams {
    pub fn new(beta: f64, gamma: f64) -> Result<SimpoParams> {
        let params = SimpoParams { beta, gamma };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::InvalidSimpoParams {
                detail: format!("beta {} must be finite and positive", self.beta),
            });
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidSimpoParams {
                detail: format!("gamma {} must be finite and non-negative", self.gamma),
            });
        }
        Ok(())
    }

    /// A zero margin makes the objective plain log-sigmoid of the
    /// reward gap; legal, but worth flagging in interfaces since the
    /// margin is the method's distinguishing term.
    pub fn is_degenerate_margin(&self) -> bool {
        self.gamma == 0.0
    }
}

impl Default for SimpoParams {
    fn default() -> Self {
        SimpoParams {
            beta: 2.5,
            gamma: 1.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogProbPair {
    pub winner: SeqLogProbs,
    pub loser: SeqLogProbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpoBatch {
    pairs: Vec<LogProbPair>,
    params: SimpoParams,
}

impl SimpoBatch {
    pub fn new(pairs: Vec<LogProbPair>, params: SimpoParams) -> Result<SimpoBatch> {
        params.validate()?;
        if pairs.is_empty() {
            return Err(Error::EmptyInput {
                what: "batch pairs".to_owned(),
            });
        }
        Ok(SimpoBatch { pairs, params })
    }

    pub fn pairs(&self) -> &[LogProbPair] {
        &self.pairs
    }

    pub fn params(&self) -> SimpoParams {
        self.params
    }
}

/// Two-branch logistic, exact to the last bit and overflow-free for any
/// finite argument.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow: the linear term carries the
/// magnitude, the log term stays in [0, ln 2].
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Length-normalized sequence reward: `beta` times the mean token
/// log-probability. Never positive, since every token log-prob is <= 0.
pub fn reward(seq: &SeqLogProbs, params: &SimpoParams) -> f64 {
    params.beta * (seq.sum() / seq.len() as f64)
}

fn margin_gap(pair: &LogProbPair, params: &SimpoParams) -> f64 {
    reward(&pair.winner, params) - reward(&pair.loser, params) - params.gamma
}

/// Probability the pair is ordered correctly by at least the margin:
/// the logistic of (winner reward - loser reward - gamma).
pub fn pair_prob(winner: &SeqLogProbs, loser: &SeqLogProbs, params: &SimpoParams) -> f64 {
    sigmoid(reward(winner, params) - reward(loser, params) - params.gamma)
}

/// Batch loss: mean over pairs of -log sigmoid(reward gap - margin),
/// computed as softplus of the negated argument. Strictly positive and
/// finite for all valid inputs.
pub fn loss(batch: &SimpoBatch) -> f64 {
    let total: f64 = batch
        .pairs
        .iter()
        .map(|pair| softplus(-margin_gap(pair, &batch.params)))
        .sum();
    total / batch.pairs.len() as f64
}

/// Gradients of the batch loss for one pair's token log-probs. Within a
/// sequence every token shares one value: the objective sees only the
/// mean, so each token contributes identically.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub winner: Vec<f64>,
    pub loser: Vec<f64>,
}

/// Analytic gradient of [`loss`] with respect to every token log-prob.
/// For pair k with gap z_k: d loss / d winner token = -sigmoid(-z_k) *
/// beta / (N * |winner|), and the loser mirrors it with opposite sign.
pub fn loss_grad(batch: &SimpoBatch) -> Vec<PairGradients> {
    let n = batch.pairs.len() as f64;
    batch
        .pairs
        .iter()
        .map(|pair| {
            let weight = sigmoid(-margin_gap(pair, &batch.params));
            let w = -weight * batch.params.beta / (n * pair.winner.len() as f64);
            let l = weight * batch.params.beta / (n * pair.loser.len() as f64);
            PairGradients {
                winner: vec![w; pair.winner.len()],
                loser: vec![l; pair.loser.len()],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub entries: usize,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
}

impl GradCheckReport {
    pub fn within(&self, rel_tol: f64) -> bool {
        self.max_rel_diff <= rel_tol
    }
}

// Loss over raw slices, used by the finite-difference path where a
// perturbed entry may transiently sit above zero.
fn loss_unchecked(pairs: &[(Vec<f64>, Vec<f64>)], params: &SimpoParams) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|(w, l)| {
            let rw = params.beta * (w.iter().sum::<f64>() / w.len() as f64);
            let rl = params.beta * (l.iter().sum::<f64>() / l.len() as f64);
            softplus(-(rw - rl - params.gamma))
        })
        .sum();
    total / pairs.len() as f64
}

/// Compare [`loss_grad`] against central finite differences with step
/// `h` over every token entry. Relative difference uses the larger
/// magnitude as denominator with a small floor so zero-gradient entries
/// do not divide by zero.
pub fn grad_check(batch: &SimpoBatch, h: f64) -> GradCheckReport {
    let analytic = loss_grad(batch);
    let mut raw: Vec<(Vec<f64>, Vec<f64>)> = batch
        .pairs
        .iter()
        .map(|p| (p.winner.logps.clone(), p.loser.logps.clone()))
        .collect();
    let mut report = GradCheckReport {
        entries: 0,
        max_abs_diff: 0.0,
        max_rel_diff: 0.0,
    };
    fn entry_mut(
        raw: &mut [(Vec<f64>, Vec<f64>)],
        pair: usize,
        winner_side: bool,
        token: usize,
    ) -> &mut f64 {
        let entry = &mut raw[pair];
        if winner_side {
            &mut entry.0[token]
        } else {
            &mut entry.1[token]
        }
    }
    for (k, grads) in analytic.iter().enumerate() {
        for winner_side in [true, false] {
            let expected_side = if winner_side {
                &grads.winner
            } else {
                &grads.loser
            };
            for (i, expected) in expected_side.iter().enumerate() {
                let original = *entry_mut(&mut raw, k, winner_side, i);
                *entry_mut(&mut raw, k, winner_side, i) = original + h;
                let up = loss_unchecked(&raw, &batch.params);
                *entry_mut(&mut raw, k, winner_side, i) = original - h;
                let down = loss_unchecked(&raw, &batch.params);
                *entry_mut(&mut raw, k, winner_side, i) = original;
                let fd = (up - down) / (2.0 * h);
                let abs = (expected - fd).abs();
                let rel = abs / expected.abs().max(fd.abs()).max(1e-12);
                report.entries += 1;
                report.max_abs_diff = report.max_abs_diff.max(abs);
                report.max_rel_diff = report.max_rel_diff.max(rel);
            }
        }
    }
    report
}

/// One preference pair's log-probs as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub winner_logps: Vec<f64>,
    pub loser_logps: Vec<f64>,
}

pub fn load_pairs_from_reader<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<PairRecord>> {
    let records: Vec<PairRecord> = crate::jsonl::read_from_reader(reader, origin)?;
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for r in &records {
        if !seen.insert(&r.pair_id) {
            return Err(Error::DuplicateId {
                id: r.pair_id.clone(),
            });
        }
    }
    Ok(records)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_pairs_from_reader(std::io::BufReader::new(f), path)
}

pub fn records_into_batch(records: &[PairRecord], params: SimpoParams) -> Result<SimpoBatch> {
    let pairs = records
        .iter()
        .map(|r| {
            Ok(LogProbPair {
                winner: SeqLogProbs::new(r.winner_logps.clone())?,
                loser: SeqLogProbs::new(r.loser_logps.clone())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SimpoBatch::new(pairs, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    // ln(1 + e^1.4) and logistic(-1.4), frozen from a 50-digit
    // evaluation; the tests must not recompute them with the same code
    // they check.
    const SOFTPLUS_1_4: f64 = 1.620417409918450926604832656431;
    const SIGMOID_NEG_1_4: f64 = 0.19781611144141825;

    fn seq(logps: &[f64]) -> SeqLogProbs {
        SeqLogProbs::new(logps.to_vec()).unwrap()
    }

    fn single_pair_batch(winner: &[f64], loser: &[f64], params: SimpoParams) -> SimpoBatch {
        SimpoBatch::new(
            vec![LogProbPair {
                winner: seq(winner),
                loser: seq(loser),
            }],
            params,
        )
        .unwrap()
    }

    #[test]
    fn reward_is_scaled_mean_logprob() {
        let params = SimpoParams::default();
        assert_eq!(reward(&seq(&[-1.0, -1.0, -1.0, -1.0]), &params), -2.5);
        assert_eq!(reward(&seq(&[0.0]), &params), 0.0);
        let r = reward(&seq(&[-0.1, -2.3, -0.7]), &params);
        assert!((r - (-31.0 / 12.0)).abs() < 1e-12, "{r}");
    }

    #[test]
    fn reward_ignores_token_duplication() {
        let params = SimpoParams::default();
        let base = seq(&[-0.25, -1.5]);
        let doubled = seq(&[-0.25, -0.25, -1.5, -1.5]);
        let tripled = seq(&[-0.25, -0.25, -0.25, -1.5, -1.5, -1.5]);
        let r = reward(&base, &params);
        assert!((reward(&doubled, &params) - r).abs() < 1e-12);
        assert!((reward(&tripled, &params) - r).abs() < 1e-12);
    }

    #[test]
    fn equal_rewards_hit_the_frozen_logistic_value() {
        let params = SimpoParams::default();
        let p = pair_prob(&seq(&[-1.0]), &seq(&[-1.0]), &params);
        assert!((p - SIGMOID_NEG_1_4).abs() < 1e-12, "{p}");
    }

    #[test]
    fn margin_cancellation_gives_even_odds() {
        let no_margin = SimpoParams::new(2.5, 0.0).unwrap();
        assert!(no_margin.is_degenerate_margin());
        let p = pair_prob(&seq(&[-1.0]), &seq(&[-1.0]), &no_margin);
        assert_eq!(p, 0.5);

        // gamma exactly equal to the reward gap cancels it: rewards 0
        // and -1.4 with beta 1.
        let params = SimpoParams::new(1.0, 1.4).unwrap();
        let p = pair_prob(&seq(&[0.0]), &seq(&[-1.4]), &params);
        assert_eq!(p, 0.5);
    }

    #[test]
    fn single_pair_loss_hits_the_frozen_softplus_value() {
        let batch = single_pair_batch(&[-1.0], &[-1.0], SimpoParams::default());
        let l = loss(&batch);
        assert!((l - SOFTPLUS_1_4).abs() < 1e-10, "{l}");
    }

    #[test]
    fn duplicated_pairs_leave_the_mean_unchanged() {
        let pair = LogProbPair {
            winner: seq(&[-0.1, -0.2]),
            loser: seq(&[-1.1, -0.9, -2.0]),
        };
        let params = SimpoParams::default();
        let one = SimpoBatch::new(vec![pair.clone()], params).unwrap();
        let two = SimpoBatch::new(vec![pair.clone(), pair], params).unwrap();
        assert!((loss(&one) - loss(&two)).abs() < 1e-15);
    }

    #[test]
    fn loss_decreases_as_the_winner_pulls_ahead() {
        let params = SimpoParams::default();
        let mut previous = f64::INFINITY;
        // Loser fixed, winner mean log-prob improving toward zero.
        for step in 0..20 {
            let w = -2.0 + 0.1 * step as f64;
            let batch = single_pair_batch(&[w], &[-2.0], params);
            let l = loss(&batch);
            assert!(l < previous, "step {step}: {l} !< {previous}");
            assert!(l > 0.0);
            previous = l;
        }
    }

    #[test]
    fn gamma_increase_raises_the_loss() {
        let mut previous = 0.0;
        for step in 0..10 {
            let params = SimpoParams::new(2.5, 0.3 * step as f64).unwrap();
            let batch = single_pair_batch(&[-0.5], &[-1.0], params);
            let l = loss(&batch);
            assert!(l > previous);
            previous = l;
        }
    }

    #[test]
    fn extreme_reward_gaps_stay_finite() {
        let params = SimpoParams::default();
        // Winner certain, loser hopeless: argument around +700.
        let easy = single_pair_batch(&[0.0], &[-280.0], params);
        let l = loss(&easy);
        assert!(l.is_finite() && l >= 0.0 && l < 1e-300, "{l}");
        // Reversed: argument around -700, loss grows linearly, no overflow.
        let hopeless = single_pair_batch(&[-280.0], &[0.0], params);
        let l = loss(&hopeless);
        assert!(l.is_finite() && (l - 701.4).abs() < 1e-9, "{l}");
        assert!(pair_prob(&seq(&[0.0]), &seq(&[-280.0]), &params) > 0.0);
        assert!(pair_prob(&seq(&[-280.0]), &seq(&[0.0]), &params) > 0.0);
    }

    #[test]
    fn analytic_gradients_have_the_documented_shape() {
        let params = SimpoParams::default();
        let batch = SimpoBatch::new(
            vec![
                LogProbPair {
                    winner: seq(&[-0.1, -0.2, -0.3]),
                    loser: seq(&[-1.0, -2.0]),
                },
                LogProbPair {
                    winner: seq(&[-0.5]),
                    loser: seq(&[-0.5]),
                },
            ],
            params,
        )
        .unwrap();
        let grads = loss_grad(&batch);
        assert_eq!(grads.len(), 2);
        assert_eq!(grads[0].winner.len(), 3);
        assert_eq!(grads[0].loser.len(), 2);
        for g in &grads {
            // Per-token symmetry: the loss sees only the sequence mean.
            assert!(g.winner.windows(2).all(|w| w[0] == w[1]));
            assert!(g.loser.windows(2).all(|w| w[0] == w[1]));
            assert!(g.winner.iter().all(|v| *v < 0.0));
            assert!(g.loser.iter().all(|v| *v > 0.0));
        }
        // Second pair has equal rewards: weight is sigmoid(1.4) exactly.
        let expected = -(1.0 - SIGMOID_NEG_1_4) * 2.5 / 2.0;
        assert!((grads[1].winner[0] - expected).abs() < 1e-12);
    }

    // Independent finite-difference oracle: naive formulas, no shared
    // helpers with the implementation.
    fn naive_loss(pairs: &[(Vec<f64>, Vec<f64>)], beta: f64, gamma: f64) -> f64 {
        let mut total = 0.0;
        for (w, l) in pairs {
            let rw = beta * w.iter().sum::<f64>() / w.len() as f64;
            let rl = beta * l.iter().sum::<f64>() / l.len() as f64;
            let z = rw - rl - gamma;
            total += (1.0 + (-z).exp()).ln();
        }
        total / pairs.len() as f64
    }

    #[test]
    fn gradients_match_independent_finite_differences() {
        let params = SimpoParams::default();
        let raw: Vec<(Vec<f64>, Vec<f64>)> = vec![
            (vec![-0.1, -2.3, -0.7], vec![-1.5, -0.4]),
            (vec![-0.01], vec![-2.9, -2.9, -0.2, -1.0]),
            (vec![-1.0, -1.0], vec![-1.0, -1.0]),
        ];
        let batch = SimpoBatch::new(
            raw.iter()
                .map(|(w, l)| LogProbPair {
                    winner: seq(w),
                    loser: seq(l),
                })
                .collect(),
            params,
        )
        .unwrap();
        let grads = loss_grad(&batch);
        let h = 1e-5;
        for (k, (w, l)) in raw.iter().enumerate() {
            for (side, grad_side) in [(true, &grads[k].winner), (false, &grads[k].loser)] {
                let len = if side { w.len() } else { l.len() };
                for i in 0..len {
                    let mut up = raw.clone();
                    let mut down = raw.clone();
                    if side {
                        up[k].0[i] += h;
                        down[k].0[i] -= h;
                    } else {
                        up[k].1[i] += h;
                        down[k].1[i] -= h;
                    }
                    let fd = (naive_loss(&up, params.beta, params.gamma)
                        - naive_loss(&down, params.beta, params.gamma))
                        / (2.0 * h);
                    let rel = (grad_side[i] - fd).abs() / fd.abs().max(1e-12);
                    assert!(rel < 1e-6, "pair {k} side {side} token {i}: {rel}");
                }
            }
        }
    }

    #[test]
    fn built_in_grad_check_agrees_with_itself() {
        let params = SimpoParams::default();
        let batch = SimpoBatch::new(
            vec![
                LogProbPair {
                    winner: seq(&[-0.3, -0.6]),
                    loser: seq(&[-1.2, -0.1, -0.8]),
                },
                LogProbPair {
                    winner: seq(&[0.0]),
                    loser: seq(&[-3.0]),
                },
            ],
            params,
        )
        .unwrap();
        let report = grad_check(&batch, 1e-5);
        assert_eq!(report.entries, 7);
        assert!(report.within(1e-6), "{report:?}");
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(SeqLogProbs::new(vec![]).is_err());
        assert!(SeqLogProbs::new(vec![-1.0, 0.1]).is_err());
        assert!(SeqLogProbs::new(vec![f64::NAN]).is_err());
        assert!(SeqLogProbs::new(vec![f64::NEG_INFINITY]).is_err());
        assert!(SimpoParams::new(0.0, 1.4).is_err());
        assert!(SimpoParams::new(-2.5, 1.4).is_err());
        assert!(SimpoParams::new(2.5, -0.1).is_err());
        assert!(SimpoParams::new(f64::NAN, 1.4).is_err());
        assert!(SimpoBatch::new(vec![], SimpoParams::default()).is_err());
    }

    #[test]
    fn pair_records_load_and_reject_duplicates() {
        let data = concat!(
            "{\"pair_id\":\"a\",\"winner_logps\":[-0.1],\"loser_logps\":[-0.5,-0.5]}\n",
            "{\"pair_id\":\"b\",\"winner_logps\":[0.0],\"loser_logps\":[-1.0]}\n",
        );
        let records = load_pairs_from_reader(data.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(records.len(), 2);
        let batch = records_into_batch(&records, SimpoParams::default()).unwrap();
        assert_eq!(batch.pairs().len(), 2);
        assert!(loss(&batch) > 0.0);

        let dup = concat!(
            "{\"pair_id\":\"a\",\"winner_logps\":[-0.1],\"loser_logps\":[-0.5]}\n",
            "{\"pair_id\":\"a\",\"winner_logps\":[-0.2],\"loser_logps\":[-0.5]}\n",
        );
        assert!(matches!(
            load_pairs_from_reader(dup.as_bytes(), Path::new("mem")),
            Err(Error::DuplicateId { .. })
        ));

        let bad = "{\"pair_id\":\"a\",\"winner_logps\":[0.5],\"loser_logps\":[-0.5]}\n";
        let records = load_pairs_from_reader(bad.as_bytes(), Path::new("mem")).unwrap();
        assert!(records_into_batch(&records, SimpoParams::default()).is_err());
    }
}
