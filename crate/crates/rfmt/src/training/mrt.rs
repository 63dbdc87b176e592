//! Sequence-level minimum risk training. Candidates come from gradient-free
//! beam search; a fresh teacher-forced pass supplies the differentiable
//! log-probabilities, and the per-candidate risk enters the loss as a
//! constant.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::adam::Adam;
use super::batch::BatchStream;
use super::mle::{
    add_grads, dropout_seed, is_divergence, validation_bleu, BestTracker, ValidationSet,
};
use super::{RiskMode, TrainConfig, TrainError, TrainReport};
use crate::gec::Corrector;
use crate::metrics::sentence_bleu;
use crate::model::{
    beam_search, greedy_translate, save_nmt, Candidate, Embedder, Forward, MaskedLm, ModelError,
    NmtModel,
};
use crate::scoring::{bert_loss, mlm_scores_batch, normalize_for_scoring};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::text::{normalize_question, TokenSeq, Vocab};

/// The frozen scorer models of the composite risk.
pub struct MrtScorers<'a> {
    pub mlm: &'a MaskedLm,
    pub embedder: &'a Embedder,
    pub gec: &'a dyn Corrector,
}

/// Risks for a whole candidate set; None entries drop that candidate.
type RiskFn<'a> = dyn Fn(&TokenSeq, &[Candidate]) -> Vec<Option<f64>> + Sync + 'a;

fn sentence_loss(
    model: &NmtModel,
    src: &TokenSeq,
    scored: &[(Candidate, f64)],
    mode: RiskMode,
    fwd: &mut Forward,
) -> Result<NodeId, ModelError> {
    // one encoder pass shared by every candidate's teacher-forced rescoring
    let src_ids = model.encoder_ids(src);
    let memory = model.encode(fwd, &src_ids)?;
    let mut score_sums = Vec::with_capacity(scored.len());
    for (cand, _) in scored {
        let vec = model.score_nodes_with_memory(fwd, memory, &cand.tokens)?;
        score_sums.push(fwd.g.sum(vec)?);
    }
    match mode {
        RiskMode::Literal => {
            // sum_k (sum_n log P) * risk_k
            let mut total: Option<NodeId> = None;
            for (node, (_, risk)) in score_sums.iter().zip(scored) {
                let term = fwd.g.scale(*node, *risk)?;
                total = Some(match total {
                    Some(t) => fwd.g.add(t, term)?,
                    None => term,
                });
            }
            Ok(total.expect("at least one candidate"))
        }
        RiskMode::Normalized => {
            // expected risk under the renormalized candidate distribution
            let stacked = fwd.g.concat(&score_sums, 0)?;
            let q = fwd.g.softmax(stacked, 0)?;
            let risks = fwd.g.constant(Tensor::vector(scored.iter().map(|(_, r)| *r).collect()));
            let weighted = fwd.g.mul(q, risks)?;
            Ok(fwd.g.sum(weighted)?)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn train_mrt_inner(
    mut model: NmtModel,
    sources: &[TokenSeq],
    risk_fn: &RiskFn,
    valid: &ValidationSet,
    vocab: &Vocab,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(NmtModel, TrainReport), TrainError> {
    cfg.validate_for_mrt()?;
    if sources.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let start = Instant::now();
    let mut report = TrainReport::new("bleu", cfg);
    let counts: Vec<usize> = sources.iter().map(|s| s.len().max(1)).collect();
    let mut stream = BatchStream::new(&counts, cfg.max_source_tokens_per_batch, cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut tracker = BestTracker::new(true);

    for step in 1..=cfg.steps {
        let batch: Vec<usize> = stream.next_batch().to_vec();
        type PerSentence = Option<(f64, Vec<Tensor>)>;
        let results: Result<Vec<PerSentence>, ModelError> = batch
            .par_iter()
            .map(|&idx| {
                let src = &sources[idx];
                if src.is_empty() {
                    return Ok(None);
                }
                let cands = beam_search(&model, vocab, src, cfg.beam_k, cfg.max_decode_len)?;
                let risks = risk_fn(src, &cands);
                let mut scored: Vec<(Candidate, f64)> = cands
                    .into_iter()
                    .zip(risks)
                    .filter_map(|(c, r)| r.map(|r| (c, r)))
                    .collect();
                if scored.is_empty() {
                    return Ok(None); // all candidates failed to score
                }
                if cfg.risk_baseline {
                    let mean: f64 =
                        scored.iter().map(|(_, r)| *r).sum::<f64>() / scored.len() as f64;
                    for (_, r) in scored.iter_mut() {
                        *r -= mean;
                    }
                }
                let mut g = Graph::new_training();
                let bound = model.params.bind(&mut g);
                let mut fwd = Forward::new(
                    &mut g,
                    &bound,
                    model.cfg.dropout,
                    dropout_seed(cfg.seed, step, idx),
                );
                let loss = sentence_loss(&model, src, &scored, cfg.risk_mode, &mut fwd)?;
                let gmap = g.backward(loss)?;
                let grads = model.params.grads_in_order(&bound, &gmap);
                Ok(Some((g.value(loss).item(), grads)))
            })
            .collect();

        let results = match results {
            Ok(r) => r,
            Err(e) if is_divergence(&e) => {
                report.wall_clock_secs = start.elapsed().as_secs_f64();
                return Err(TrainError::Diverged { step, report: Box::new(report) });
            }
            Err(e) => return Err(e.into()),
        };

        let mut total_loss = 0.0;
        let mut n_sentences = 0usize;
        let mut grads: Option<Vec<Tensor>> = None;
        for r in results {
            match r {
                Some((loss, g)) => {
                    total_loss += loss;
                    n_sentences += 1;
                    match &mut grads {
                        Some(acc) => add_grads(acc, &g),
                        None => grads = Some(g),
                    }
                }
                None => report.skipped_sentences += 1,
            }
        }
        let Some(grads) = grads else {
            continue; // every sentence in the batch was skipped
        };
        adam.step(&mut model.params, &grads, cfg.lr.at(step));
        model.step += 1;
        report
            .losses
            .push(super::StepLoss { step, loss: total_loss / n_sentences.max(1) as f64 });

        if step % cfg.checkpoint_every == 0 {
            let metric = validation_bleu(&model, vocab, valid, cfg.max_decode_len)?;
            let path = match ckpt_dir {
                Some(dir) => {
                    let p = dir.join(format!("step{step}.rfmt"));
                    save_nmt(&p, &model)?;
                    Some(p.to_string_lossy().into_owned())
                }
                None => None,
            };
            report.checkpoints.push(super::CheckpointEval { step, metric, path });
            tracker.consider(step, metric, &model.params);
        }
    }

    if tracker.best_params.is_none() {
        let metric = validation_bleu(&model, vocab, valid, cfg.max_decode_len)?;
        tracker.consider(model.step, metric, &model.params);
    }
    model.params = tracker.best_params.take().expect("at least one evaluation");
    report.best_step = tracker.best_step;
    report.best_metric = tracker.best_metric;
    if let Some(dir) = ckpt_dir {
        save_nmt(&dir.join("best.rfmt"), &model)?;
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// The proposed fine-tuning: per sentence, decode K candidates, normalize
/// the question marks of the source and every candidate, correct the source,
/// and weight each candidate's log-probability by its composite
/// fluency/adequacy risk. References never enter the loss.
pub fn train_mrt_composite(
    model: NmtModel,
    sources: &[TokenSeq],
    scorers: &MrtScorers,
    valid: &ValidationSet,
    vocab: &Vocab,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(NmtModel, TrainReport), TrainError> {
    let weights = cfg.weights;
    let risk = move |src: &TokenSeq, cands: &[Candidate]| -> Vec<Option<f64>> {
        let x_norm = vocab.tokenize(&normalize_question(&src.surface()));
        let y_norms: Vec<crate::text::TokenSeq> =
            cands.iter().map(|c| normalize_for_scoring(&c.tokens, vocab)).collect();
        let refs: Vec<&crate::text::TokenSeq> = y_norms.iter().collect();
        // fluency side batched over the candidate set (one parameter bind)
        let mlm_scores = match mlm_scores_batch(scorers.mlm, &refs, weights.mlm_normalize) {
            Ok(s) => s,
            Err(_) => return vec![None; cands.len()],
        };
        y_norms
            .iter()
            .zip(mlm_scores)
            .map(|(y_norm, ms)| {
                let l_mlm = -ms;
                bert_loss(&x_norm, y_norm, scorers.embedder, scorers.gec, vocab)
                    .ok()
                    .map(|l_bert| weights.alpha * l_mlm + weights.beta * l_bert)
            })
            .collect()
    };
    train_mrt_inner(model, sources, &risk, valid, vocab, cfg, ckpt_dir)
}

/// The MRT baseline: risk is 1 - sentence BLEU against a synthetic
/// reference (typically a forward translation).
pub fn train_mrt_bleu(
    model: NmtModel,
    pairs: &[(TokenSeq, String)],
    valid: &ValidationSet,
    vocab: &Vocab,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(NmtModel, TrainReport), TrainError> {
    let sources: Vec<TokenSeq> = pairs.iter().map(|(s, _)| s.clone()).collect();
    let refs: std::collections::HashMap<String, &String> =
        pairs.iter().map(|(s, r)| (s.surface(), r)).collect();
    let risk = move |src: &TokenSeq, cands: &[Candidate]| -> Vec<Option<f64>> {
        let Some(reference) = refs.get(&src.surface()) else {
            return vec![None; cands.len()];
        };
        cands
            .iter()
            .map(|c| Some(1.0 - sentence_bleu(&c.tokens.surface(), reference) / 100.0))
            .collect()
    };
    train_mrt_inner(model, &sources, &risk, valid, vocab, cfg, ckpt_dir)
}

/// Greedy-translate a source-only corpus into synthetic parallel data;
/// output lines align one-to-one with the input.
pub fn forward_translate(
    model: &NmtModel,
    sources: &[TokenSeq],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<String>, TrainError> {
    let out: Result<Vec<String>, ModelError> = sources
        .par_iter()
        .map(|src| greedy_translate(model, vocab, src, max_len).map(|c| c.tokens.surface()))
        .collect();
    Ok(out?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundParams, NmtConfig, OracleEmbedder};
    use crate::training::LrSchedule;

    fn tiny_model(vocab: usize, seed: u64) -> NmtModel {
        let cfg = NmtConfig {
            vocab_size: vocab,
            layers: 1,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            dropout: 0.0,
            max_len: 24,
        };
        NmtModel::new(cfg, seed).unwrap()
    }

    #[test]
    fn literal_gradient_is_risk_times_score_gradient() {
        // with fixed candidates and risks, the literal loss gradient must be
        // sum_k risk_k * grad(sum logP_k): checked against the risk-scaled
        // sum of per-candidate backward passes and finite differences
        let vocab = Vocab::build(&["a b c d".to_string()], 1).unwrap();
        let model = {
            let cfg = NmtConfig {
                vocab_size: vocab.len(),
                layers: 1,
                heads: 2,
                d_model: 4,
                d_ff: 8,
                dropout: 0.0,
                max_len: 16,
            };
            NmtModel::new(cfg, 11).unwrap()
        };
        let src = vocab.tokenize("a b");
        let cands = vec![
            (fake_candidate(&vocab, "c d"), 0.7),
            (fake_candidate(&vocab, "d c a"), 0.2),
        ];
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        let tensors: Vec<Tensor> = model.params.tensors().cloned().collect();
        let err = crate::tensor::grad_check(
            |g, ids| {
                let bound = BoundParams::from_ids(names.iter().cloned(), ids.to_vec());
                let mut fwd = Forward::new(g, &bound, 0.0, 0);
                sentence_loss(&model, &src, &cands, RiskMode::Literal, &mut fwd).map_err(
                    |e| match e {
                        ModelError::Tensor(t) => t,
                        other => panic!("unexpected {other}"),
                    },
                )
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "literal MRT loss gradient error {err}");

        // identity: loss gradient equals sum_k risk_k * grad, candidate by candidate
        let combined = {
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let mut fwd = Forward::new(&mut g, &bound, 0.0, 0);
            let loss = sentence_loss(&model, &src, &cands, RiskMode::Literal, &mut fwd).unwrap();
            let gmap = g.backward(loss).unwrap();
            model.params.grads_in_order(&bound, &gmap)
        };
        let mut expected: Option<Vec<Tensor>> = None;
        for (cand, risk) in &cands {
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let mut fwd = Forward::new(&mut g, &bound, 0.0, 0);
            let vec = model.score_nodes(&mut fwd, &src, &cand.tokens).unwrap();
            let sum = fwd.g.sum(vec).unwrap();
            let gmap = g.backward(sum).unwrap();
            let mut grads = model.params.grads_in_order(&bound, &gmap);
            for t in &mut grads {
                for x in t.data_mut() {
                    *x *= risk;
                }
            }
            match &mut expected {
                Some(acc) => add_grads(acc, &grads),
                None => expected = Some(grads),
            }
        }
        for (a, b) in combined.iter().zip(expected.unwrap().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    fn fake_candidate(vocab: &Vocab, text: &str) -> Candidate {
        let tokens = vocab.tokenize(text);
        let n = tokens.len() + 1;
        Candidate {
            tokens,
            total_logprob: -(n as f64),
            token_logprobs: vec![-1.0; n],
            finished: true,
        }
    }

    #[test]
    fn normalized_loss_is_a_convex_combination_of_risks() {
        let vocab = Vocab::build(&["a b c d".to_string()], 1).unwrap();
        let model = tiny_model(vocab.len(), 3);
        let src = vocab.tokenize("a b");
        let cands =
            vec![(fake_candidate(&vocab, "c"), 0.9), (fake_candidate(&vocab, "d c"), 0.3)];
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let mut fwd = Forward::new(&mut g, &bound, 0.0, 0);
        let loss = sentence_loss(&model, &src, &cands, RiskMode::Normalized, &mut fwd).unwrap();
        let v = g.value(loss).item();
        assert!((0.3..=0.9).contains(&v), "expected risk {v} outside candidate range");
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        // alpha = beta = 0 makes every composite risk zero: a training step
        // must not move the parameters
        let task = crate::corpus::Task::new(crate::corpus::TaskSpec {
            adapt_size: 6,
            mono_size: 10,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let corpus = task.gen_adapt().unwrap();
        let mono = task.gen_monolingual().unwrap();
        let mut lines: Vec<String> = corpus.iter().map(|t| t.noisy_src.clone()).collect();
        lines.extend(corpus.iter().map(|t| t.tgt.clone()));
        lines.extend(mono.tgt.iter().cloned());
        let vocab = Vocab::build(&lines, 1).unwrap();
        let model = tiny_model(vocab.len(), 5);
        let before: Vec<Vec<f64>> = model.params.tensors().map(|t| t.data().to_vec()).collect();

        let mlm_cfg = crate::model::MlmConfig {
            vocab_size: vocab.len(),
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            max_len: 24,
        };
        let mlm = MaskedLm::new(mlm_cfg, 2).unwrap();
        let emb = Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary()));
        let gec = crate::gec::IdentityCorrector;
        let scorers = MrtScorers { mlm: &mlm, embedder: &emb, gec: &gec };
        let sources: Vec<TokenSeq> = corpus.iter().map(|t| vocab.tokenize(&t.noisy_src)).collect();
        let valid = ValidationSet {
            sources: sources.clone(),
            references: corpus.iter().map(|t| t.tgt.clone()).collect(),
        };
        let cfg = TrainConfig {
            steps: 1,
            checkpoint_every: 1,
            beam_k: 2,
            max_decode_len: 12,
            weights: crate::scoring::ScoreWeights { alpha: 0.0, beta: 0.0, mlm_normalize: true },
            lr: LrSchedule::Fixed { lr: 1e-2 },
            seed: 3,
            ..TrainConfig::default()
        };
        let (trained, report) =
            train_mrt_composite(model, &sources, &scorers, &valid, &vocab, &cfg, None).unwrap();
        assert_eq!(report.losses.len(), 1);
        assert_eq!(report.losses[0].loss, 0.0);
        for (t, b) in trained.params.tensors().zip(before) {
            assert_eq!(t.data(), b.as_slice());
        }
    }

    #[test]
    fn bleu_risk_is_zero_for_the_reference_and_bounded() {
        let vocab = Vocab::build(&["a b c d e".to_string()], 1).unwrap();
        let reference = "c d e".to_string();
        let perfect = fake_candidate(&vocab, "c d e");
        let risk = 1.0 - sentence_bleu(&perfect.tokens.surface(), &reference) / 100.0;
        assert!(risk.abs() < 1e-12);
        for hyp in ["a", "a b", "e d c", "c d", "b b b b"] {
            let r = 1.0 - sentence_bleu(hyp, &reference) / 100.0;
            assert!((0.0..=1.0).contains(&r), "risk {r} for {hyp:?}");
        }
    }

    #[test]
    fn mrt_composite_requires_beam_of_two() {
        let vocab = Vocab::build(&["a".to_string()], 1).unwrap();
        let model = tiny_model(vocab.len(), 1);
        let mlm_cfg = crate::model::MlmConfig {
            vocab_size: vocab.len(),
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            max_len: 16,
        };
        let mlm = MaskedLm::new(mlm_cfg, 2).unwrap();
        let task = crate::corpus::Task::new(Default::default()).unwrap();
        let emb = Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary()));
        let gec = crate::gec::IdentityCorrector;
        let scorers = MrtScorers { mlm: &mlm, embedder: &emb, gec: &gec };
        let sources = vec![vocab.tokenize("a")];
        let valid = ValidationSet { sources: sources.clone(), references: vec!["a".into()] };
        let cfg = TrainConfig { beam_k: 1, ..TrainConfig::default() };
        assert!(matches!(
            train_mrt_composite(model, &sources, &scorers, &valid, &vocab, &cfg, None),
            Err(TrainError::BadConfig(_))
        ));
    }

    #[test]
    fn forward_translation_aligns_and_repeats() {
        let vocab = Vocab::build(&["a b c".to_string()], 1).unwrap();
        let model = tiny_model(vocab.len(), 8);
        let sources: Vec<TokenSeq> =
            ["a b", "b c", "c a"].iter().map(|s| vocab.tokenize(s)).collect();
        let out1 = forward_translate(&model, &sources, &vocab, 10).unwrap();
        let out2 = forward_translate(&model, &sources, &vocab, 10).unwrap();
        assert_eq!(out1.len(), sources.len());
        assert_eq!(out1, out2);
    }
}
