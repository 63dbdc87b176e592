//! The MLM re-ranking baseline: decode K candidates, pick the one the
//! masked LM scores highest.

use serde::Serialize;
use thiserror::Error;

use crate::model::{beam_search, Candidate, MaskedLm, ModelError, NmtModel};
use crate::scoring::{mlm_score, normalize_for_scoring, ScoreError};
use crate::text::{TokenSeq, Vocab};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Which external scorer ranks the candidates. The masked variant is the
/// default; the left-to-right variant scores each position with all later
/// tokens masked, approximating a causal LM with the same network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankScorer {
    Mlm,
    LmLeftToRight,
}

#[derive(Debug)]
pub struct RerankChoice {
    pub candidates: Vec<Candidate>,
    pub scores: Vec<f64>,
    pub chosen_index: usize,
}

impl RerankChoice {
    pub fn chosen(&self) -> &Candidate {
        &self.candidates[self.chosen_index]
    }
}

fn lm_left_to_right_score(mlm: &MaskedLm, y: &TokenSeq, normalize: bool) -> Result<f64, RerankError> {
    if y.is_empty() {
        return Err(RerankError::Score(ScoreError::EmptyInput));
    }
    let mut total = 0.0;
    for pos in 0..y.len() {
        // hide everything to the right; the scored slot is masked by the
        // distribution call itself
        let mut masked = y.clone();
        for p in pos + 1..y.len() {
            masked.ids[p] = crate::text::MASK;
        }
        let dist = mlm.mlm_distribution_at(&masked, pos)?;
        total += dist[y.ids[pos] as usize];
    }
    if normalize {
        total /= y.len() as f64;
    }
    Ok(total)
}

/// Decode K candidates, score each with the MLM after question-mark
/// normalization, and choose the argmax. Ties break toward the higher
/// translation log-probability, then the lower candidate index.
pub fn rerank(
    model: &NmtModel,
    mlm: &MaskedLm,
    vocab: &Vocab,
    src: &TokenSeq,
    k: usize,
    max_len: usize,
    scorer: RerankScorer,
    normalize: bool,
) -> Result<RerankChoice, RerankError> {
    let candidates = beam_search(model, vocab, src, k, max_len)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for cand in &candidates {
        let y = normalize_for_scoring(&cand.tokens, vocab);
        let s = match scorer {
            RerankScorer::Mlm => mlm_score(mlm, &y, normalize)?,
            RerankScorer::LmLeftToRight => lm_left_to_right_score(mlm, &y, normalize)?,
        };
        scores.push(s);
    }
    let chosen_index = select(&scores, &candidates);
    Ok(RerankChoice { candidates, scores, chosen_index })
}

/// Argmax over scores with the documented tie-break rule.
pub(crate) fn select(scores: &[f64], candidates: &[Candidate]) -> usize {
    let mut best = 0usize;
    for i in 1..scores.len() {
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best]
                && candidates[i].total_logprob > candidates[best].total_logprob);
        if better {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MlmConfig, NmtConfig};
    use crate::text::EOS;

    fn setup() -> (Vocab, NmtModel, MaskedLm) {
        let v = Vocab::build(&["a b c d e ?".to_string()], 1).unwrap();
        let cfg = NmtConfig {
            vocab_size: v.len(),
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            max_len: 24,
        };
        let mut model = NmtModel::new(cfg, 19).unwrap();
        for (name, t) in model.params.iter_mut() {
            if name == "out.b" {
                t.data_mut()[EOS as usize] = 2.0;
            }
        }
        let mlm_cfg = MlmConfig {
            vocab_size: v.len(),
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            max_len: 24,
        };
        let mut mlm = MaskedLm::new(mlm_cfg, 4).unwrap();
        // untrained output projections are zero (uniform logits); perturb so
        // scores actually depend on context
        for (name, t) in mlm.params.iter_mut() {
            if name == "out.w" {
                for (i, x) in t.data_mut().iter_mut().enumerate() {
                    *x = (i as f64 * 0.7).sin() * 0.3;
                }
            }
        }
        (v, model, mlm)
    }

    #[test]
    fn k_one_returns_the_greedy_output() {
        let (v, model, mlm) = setup();
        let src = v.tokenize("a b");
        let choice = rerank(&model, &mlm, &v, &src, 1, 10, RerankScorer::Mlm, true).unwrap();
        assert_eq!(choice.candidates.len(), 1);
        assert_eq!(choice.chosen_index, 0);
        let greedy = crate::model::greedy_translate(&model, &v, &src, 10).unwrap();
        assert_eq!(choice.chosen().tokens.ids, greedy.tokens.ids);
    }

    #[test]
    fn chosen_score_is_the_maximum() {
        let (v, model, mlm) = setup();
        let src = v.tokenize("a b c");
        let choice = rerank(&model, &mlm, &v, &src, 4, 10, RerankScorer::Mlm, true).unwrap();
        let max = choice.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(choice.scores[choice.chosen_index], max);
        assert_eq!(choice.scores.len(), choice.candidates.len());
    }

    fn fake(v: &Vocab, text: &str, logprob: f64) -> Candidate {
        Candidate {
            tokens: v.tokenize(text),
            total_logprob: logprob,
            token_logprobs: vec![logprob],
            finished: true,
        }
    }

    #[test]
    fn ties_break_by_logprob_then_index() {
        let v = Vocab::build(&["a b c".to_string()], 1).unwrap();
        let cands = vec![fake(&v, "a", -2.0), fake(&v, "b", -1.0), fake(&v, "c", -1.0)];
        // equal scores: higher logprob wins
        assert_eq!(select(&[0.5, 0.5, 0.5], &cands), 1);
        // equal scores and logprobs: lower index wins
        let cands_eq = vec![fake(&v, "a", -1.0), fake(&v, "b", -1.0)];
        assert_eq!(select(&[0.5, 0.5], &cands_eq), 0);
        // adding a constant never changes the argmax
        let base = [0.1, 0.9, 0.4];
        let shifted: Vec<f64> = base.iter().map(|s| s + 7.0).collect();
        assert_eq!(select(&base, &cands), select(&shifted, &cands));
    }

    #[test]
    fn left_to_right_variant_runs_and_differs() {
        let (v, model, mlm) = setup();
        let src = v.tokenize("a b c");
        let m = rerank(&model, &mlm, &v, &src, 3, 10, RerankScorer::Mlm, true).unwrap();
        let l = rerank(&model, &mlm, &v, &src, 3, 10, RerankScorer::LmLeftToRight, true).unwrap();
        assert_eq!(m.candidates.len(), l.candidates.len());
        // same candidate set, generally different scores
        assert_ne!(m.scores, l.scores);
    }
}
