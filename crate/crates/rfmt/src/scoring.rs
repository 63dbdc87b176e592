//! The reference-free scoring stack: masked-LM fluency, cross-lingual
//! BERTScore adequacy with a GEC-guarded max, and the composite risk that
//! weights the two.
//!
//! Scores are plain numbers, never graph nodes: the risk of a candidate is a
//! constant with respect to the translation model's parameters, and
//! gradients flow only through the candidate log-probabilities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gec::Corrector;
use crate::model::{Embedder, MaskedLm, ModelError};
use crate::text::{normalize_question, TokenSeq, Vocab};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot score an empty sequence")]
    EmptyInput,
    #[error("embedding vector {index} has norm {norm}, expected 1")]
    NotUnitNorm { index: usize, norm: f64 },
    #[error("invalid score weights: alpha and beta are both zero")]
    ZeroWeights,
}

/// Greedy-matching similarity decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-candidate adequacy/fluency decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub l_mlm: f64,
    pub l_bert: f64,
    pub composite: f64,
}

/// Mixing weights for the composite risk; `mlm_normalize` switches the MLM
/// score between the literal sum and a per-token mean.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_normalize")]
    pub mlm_normalize: bool,
}

fn default_normalize() -> bool {
    true
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { alpha: 0.15, beta: 0.85, mlm_normalize: true }
    }
}

impl ScoreWeights {
    pub fn checked(alpha: f64, beta: f64, mlm_normalize: bool) -> Result<Self, ScoreError> {
        if alpha == 0.0 && beta == 0.0 {
            return Err(ScoreError::ZeroWeights);
        }
        Ok(ScoreWeights { alpha, beta, mlm_normalize })
    }
}

/// Masked-LM score of a sentence: the sum over positions of the
/// log-probability of each token with that position masked; optionally
/// divided by length. Always <= 0.
pub fn mlm_score(mlm: &MaskedLm, y: &TokenSeq, normalize: bool) -> Result<f64, ScoreError> {
    Ok(mlm_scores_batch(mlm, &[y], normalize)?[0])
}

/// MLM scores for several sentences over one shared graph (the parameters
/// are bound once instead of once per masked position).
pub fn mlm_scores_batch(
    mlm: &MaskedLm,
    ys: &[&TokenSeq],
    normalize: bool,
) -> Result<Vec<f64>, ScoreError> {
    if ys.iter().any(|y| y.is_empty()) {
        return Err(ScoreError::EmptyInput);
    }
    let per_position = mlm.pseudo_logprobs(ys)?;
    Ok(per_position
        .iter()
        .zip(ys)
        .map(|(lps, y)| {
            let total: f64 = lps.iter().sum();
            if normalize {
                total / y.len() as f64
            } else {
                total
            }
        })
        .collect())
}

fn check_unit(vecs: &[Vec<f64>]) -> Result<(), ScoreError> {
    for (i, v) in vecs.iter().enumerate() {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(ScoreError::NotUnitNorm { index: i, norm });
        }
    }
    Ok(())
}

/// Greedy-matching similarity of two pre-normalized embedding lists:
/// recall is the mean over `x_vecs` of the best dot product against
/// `y_vecs`, precision the mean over `y_vecs` against `x_vecs`, and f1
/// their harmonic mean.
pub fn bertscore(x_vecs: &[Vec<f64>], y_vecs: &[Vec<f64>]) -> Result<BertScoreTriple, ScoreError> {
    if x_vecs.is_empty() || y_vecs.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    check_unit(x_vecs)?;
    check_unit(y_vecs)?;
    let best_against = |a: &[f64], others: &[Vec<f64>]| -> f64 {
        others
            .iter()
            .map(|b| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let recall = x_vecs.iter().map(|x| best_against(x, y_vecs)).sum::<f64>() / x_vecs.len() as f64;
    let precision =
        y_vecs.iter().map(|y| best_against(y, x_vecs)).sum::<f64>() / y_vecs.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BertScoreTriple { precision, recall, f1 })
}

/// Adequacy loss of a candidate against a (possibly noisy) source:
/// `1 - max(F(x, y), F(gec(x), y))`, so a candidate is never penalized for
/// out-translating source noise the corrector can explain.
pub fn bert_loss(
    x: &TokenSeq,
    y_hat: &TokenSeq,
    embedder: &Embedder,
    gec: &dyn Corrector,
    vocab: &Vocab,
) -> Result<f64, ScoreError> {
    let x_vecs = embedder.embed_tokens(x)?;
    let y_vecs = embedder.embed_tokens(y_hat)?;
    let raw = bertscore(&x_vecs, &y_vecs)?;
    let corrected = vocab.tokenize(&gec.correct(&x.surface()));
    let best = if corrected.tokens == x.tokens {
        raw.f1
    } else {
        let c_vecs = embedder.embed_tokens(&corrected)?;
        raw.f1.max(bertscore(&c_vecs, &y_vecs)?.f1)
    };
    Ok(1.0 - best)
}

/// The composite risk of Algorithm 1's scoring step. Inputs are expected to
/// be question-mark normalized already (the trainer normalizes once).
pub fn composite_risk(
    x: &TokenSeq,
    y_hat: &TokenSeq,
    mlm: &MaskedLm,
    embedder: &Embedder,
    gec: &dyn Corrector,
    weights: &ScoreWeights,
    vocab: &Vocab,
) -> Result<RiskScore, ScoreError> {
    let l_mlm = -mlm_score(mlm, y_hat, weights.mlm_normalize)?;
    let l_bert = bert_loss(x, y_hat, embedder, gec, vocab)?;
    Ok(RiskScore { l_mlm, l_bert, composite: weights.alpha * l_mlm + weights.beta * l_bert })
}

/// Normalize a candidate's surface text and re-tokenize it for scoring.
pub fn normalize_for_scoring(seq: &TokenSeq, vocab: &Vocab) -> TokenSeq {
    vocab.tokenize(&normalize_question(&seq.surface()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gec::IdentityCorrector;
    use crate::model::{MaskedLm, MlmConfig, OracleEmbedder};
    use crate::util::derive_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_mlm() -> (Vocab, MaskedLm) {
        let v = Vocab::build(&["a b c d e ?".to_string()], 1).unwrap();
        let cfg = MlmConfig {
            vocab_size: v.len(),
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            max_len: 16,
        };
        let mlm = MaskedLm::new(cfg, 17).unwrap();
        (v, mlm)
    }

    #[test]
    fn mlm_score_sum_vs_mean_and_brute_force() {
        let (v, mlm) = tiny_mlm();
        let y = v.tokenize("a b c d");
        let total = mlm_score(&mlm, &y, false).unwrap();
        let mean = mlm_score(&mlm, &y, true).unwrap();
        assert!((mean - total / 4.0).abs() < 1e-12);
        assert!(total <= 0.0);
        // one-mask-at-a-time brute force
        let brute: f64 = (0..y.len()).map(|p| mlm.mlm_logprob_at(&y, p).unwrap()).sum();
        assert_eq!(total, brute);
        assert!(matches!(mlm_score(&mlm, &v.tokenize(""), false), Err(ScoreError::EmptyInput)));
    }

    fn basis(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn bertscore_hand_cases() {
        // identical lists
        let x = vec![basis(0, 4), basis(1, 4)];
        let t = bertscore(&x, &x).unwrap();
        assert_eq!((t.precision, t.recall, t.f1), (1.0, 1.0, 1.0));

        // x = [e1, e2], y = [e1]: R = 0.5, P = 1, F = 2/3
        let y = vec![basis(0, 4)];
        let t = bertscore(&x, &y).unwrap();
        assert_eq!(t.recall, 0.5);
        assert_eq!(t.precision, 1.0);
        assert!((t.f1 - 2.0 / 3.0).abs() < 1e-12);

        // permuting y leaves the triple unchanged
        let y2 = vec![basis(1, 4), basis(0, 4)];
        let y2_rev = vec![basis(0, 4), basis(1, 4)];
        assert_eq!(bertscore(&x, &y2).unwrap(), bertscore(&x, &y2_rev).unwrap());
    }

    #[test]
    fn bertscore_rejects_bad_inputs() {
        let x = vec![basis(0, 3)];
        assert!(matches!(bertscore(&x, &[]), Err(ScoreError::EmptyInput)));
        let bad = vec![vec![0.5, 0.5, 0.0]];
        assert!(matches!(bertscore(&x, &bad), Err(ScoreError::NotUnitNorm { .. })));
    }

    fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn bertscore_matches_brute_force_double_loop() {
        for seed in 0..200u64 {
            let mut rng = derive_rng(seed, &[77]);
            let d = rng.gen_range(2..6);
            let nx = rng.gen_range(1..6);
            let ny = rng.gen_range(1..6);
            let x: Vec<Vec<f64>> = (0..nx).map(|_| random_unit(&mut rng, d)).collect();
            let y: Vec<Vec<f64>> = (0..ny).map(|_| random_unit(&mut rng, d)).collect();
            let t = bertscore(&x, &y).unwrap();
            // brute force O(n*m) double loop
            let mut recall = 0.0;
            for xi in &x {
                let mut best = f64::NEG_INFINITY;
                for yj in &y {
                    let dot: f64 = xi.iter().zip(yj).map(|(a, b)| a * b).sum();
                    if dot > best {
                        best = dot;
                    }
                }
                recall += best;
            }
            recall /= nx as f64;
            let mut precision = 0.0;
            for yj in &y {
                let mut best = f64::NEG_INFINITY;
                for xi in &x {
                    let dot: f64 = xi.iter().zip(yj).map(|(a, b)| a * b).sum();
                    if dot > best {
                        best = dot;
                    }
                }
                precision += best;
            }
            precision /= ny as f64;
            assert_eq!(t.recall, recall, "seed {seed}");
            assert_eq!(t.precision, precision, "seed {seed}");
            // harmonic mean lies between its (positive) arguments
            if precision > 0.0 && recall > 0.0 {
                assert!(t.f1 <= precision.max(recall) + 1e-12);
                assert!(t.f1 >= precision.min(recall) - 1e-12);
            }
        }
    }

    #[test]
    fn composite_risk_paper_constants() {
        let w = ScoreWeights::default();
        let composite = w.alpha * 2.0 + w.beta * 0.4;
        assert_eq!(composite, 0.64);
        // alpha = 0 leaves only the adequacy side
        let w0 = ScoreWeights::checked(0.0, 0.85, true).unwrap();
        assert_eq!(w0.alpha * 123.0 + w0.beta * 0.4, 0.85 * 0.4);
        assert!(matches!(ScoreWeights::checked(0.0, 0.0, true), Err(ScoreError::ZeroWeights)));
    }

    #[test]
    fn bert_loss_identity_gec_and_max_form() {
        let task = crate::corpus::Task::new(crate::corpus::TaskSpec::default()).unwrap();
        let emb = Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary()));
        let corpus: Vec<String> = ["does it work with alpha ?", "ahplaa htiwa krowa tia seoda ka ?"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let x = vocab.tokenize("does it work with alpha ?");
        let y = vocab.tokenize("ahplaa htiwa krowa tia seoda ka ?");
        // every source token finds its lemma mate (R = 1); the particle "ka"
        // has no source counterpart, so P = 6/7 and loss = 1 - 12/13
        let l = bert_loss(&x, &y, &emb, &IdentityCorrector, &vocab).unwrap();
        assert!((l - 1.0 / 13.0).abs() < 1e-12, "loss {l}");

        // max() form: the corrected source can only lower the loss
        let gec = crate::gec::GecCorrector::from_task(&task);
        let noisy = vocab.tokenize("it works with alpha ?");
        let with_gec = bert_loss(&noisy, &y, &emb, &gec, &vocab).unwrap();
        let without = bert_loss(&noisy, &y, &emb, &IdentityCorrector, &vocab).unwrap();
        assert!(with_gec <= without + 1e-12, "gec {with_gec} vs raw {without}");
    }

    #[test]
    fn gold_translation_of_corrected_source_beats_corruptions() {
        // the gold translation of gec(noisy x) should score at most the
        // bert loss of any corrupted variant of itself
        let task = crate::corpus::Task::new(crate::corpus::TaskSpec {
            adapt_size: 50,
            seed: 23,
            ..crate::corpus::TaskSpec::default()
        })
        .unwrap();
        let gec = crate::gec::GecCorrector::from_task(&task);
        let emb = Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary()));
        let corpus = task.gen_adapt().unwrap();
        let mut all_lines: Vec<String> = corpus.iter().map(|t| t.noisy_src.clone()).collect();
        all_lines.extend(corpus.iter().map(|t| t.tgt.clone()));
        all_lines.push("zzz".into());
        let vocab = Vocab::build(&all_lines, 1).unwrap();

        for triple in &corpus {
            use crate::gec::Corrector as _;
            let x_norm = vocab.tokenize(&normalize_question(&triple.noisy_src));
            let corrected = gec.correct(&triple.noisy_src);
            let Ok(ideal) = task.gold_translate(&corrected) else {
                continue; // correction missed the template; skip
            };
            let y_star = vocab.tokenize(&ideal);
            let base = bert_loss(&x_norm, &y_star, &emb, &gec, &vocab).unwrap();

            // corruption 1: drop the first token
            let dropped = vocab.seq_from_ids(&y_star.ids[1..]);
            // corruption 2: replace a content token with an unrelated word
            let mut replaced = y_star.clone();
            replaced.tokens[0] = "zzz".into();
            replaced.ids[0] = vocab.id("zzz");
            for (name, corrupted) in [("dropped", &dropped), ("replaced", &replaced)] {
                let worse = bert_loss(&x_norm, corrupted, &emb, &gec, &vocab).unwrap();
                assert!(
                    base <= worse + 1e-12,
                    "{name}: base {base} > corrupted {worse} for {:?}",
                    triple.noisy_src
                );
            }
        }
    }

    #[test]
    fn risk_is_pure_and_monotone_in_weights() {
        let (v, mlm) = tiny_mlm();
        let task = crate::corpus::Task::new(crate::corpus::TaskSpec::default()).unwrap();
        let emb = Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary()));
        let x = v.tokenize("a b ?");
        let y = v.tokenize("c d ?");
        let w = ScoreWeights::default();
        let r1 = composite_risk(&x, &y, &mlm, &emb, &IdentityCorrector, &w, &v).unwrap();
        let r2 = composite_risk(&x, &y, &mlm, &emb, &IdentityCorrector, &w, &v).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.l_mlm >= 0.0);
        assert!((r1.composite - (w.alpha * r1.l_mlm + w.beta * r1.l_bert)).abs() < 1e-15);
    }

    proptest! {
        // precision of (x, y) is recall of (y, x) by definition
        #[test]
        fn bertscore_precision_recall_symmetry(seed in 0u64..500) {
            let mut rng = derive_rng(seed, &[88]);
            let d = rng.gen_range(2..5);
            let x: Vec<Vec<f64>> = (0..rng.gen_range(1..5)).map(|_| random_unit(&mut rng, d)).collect();
            let y: Vec<Vec<f64>> = (0..rng.gen_range(1..5)).map(|_| random_unit(&mut rng, d)).collect();
            let fwd = bertscore(&x, &y).unwrap();
            let rev = bertscore(&y, &x).unwrap();
            prop_assert_eq!(fwd.precision, rev.recall);
            prop_assert_eq!(fwd.recall, rev.precision);
            prop_assert_eq!(fwd.f1, rev.f1);
        }
    }
}
