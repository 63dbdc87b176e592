//! Label-smoothed maximum-likelihood training with teacher forcing.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::adam::Adam;
use super::batch::BatchStream;
use super::{TrainConfig, TrainError, TrainReport};
use crate::metrics::bleu;
use crate::model::{greedy_translate, save_nmt, Forward, ModelError, NmtModel};
use crate::tensor::{Graph, Tensor, TensorError};
use crate::text::{TokenSeq, Vocab, BOS, EOS};
use crate::util::{derive_rng, label};

use rand_chacha::rand_core::RngCore;

/// Held-out sources with gold reference strings, used only for checkpoint
/// selection.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub sources: Vec<TokenSeq>,
    pub references: Vec<String>,
}

pub(crate) fn dropout_seed(seed: u64, step: u64, idx: usize) -> u64 {
    let mut rng = derive_rng(seed, &[label("dropout"), step, idx as u64]);
    rng.next_u64()
}

pub(crate) fn add_grads(acc: &mut [Tensor], extra: &[Tensor]) {
    for (a, b) in acc.iter_mut().zip(extra) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += *y;
        }
    }
}

pub(crate) fn scale_grads(grads: &mut [Tensor], factor: f64) {
    for g in grads {
        for x in g.data_mut() {
            *x *= factor;
        }
    }
}

pub(crate) fn is_divergence(err: &ModelError) -> bool {
    matches!(err, ModelError::Tensor(TensorError::NonFinite { .. }))
}

/// Corpus BLEU of greedy translations of the validation sources.
pub(crate) fn validation_bleu(
    model: &NmtModel,
    vocab: &Vocab,
    valid: &ValidationSet,
    max_len: usize,
) -> Result<f64, TrainError> {
    let hyps: Result<Vec<String>, ModelError> = valid
        .sources
        .par_iter()
        .map(|src| greedy_translate(model, vocab, src, max_len).map(|c| c.tokens.surface()))
        .collect();
    Ok(bleu(&hyps?, &valid.references, false)?)
}

/// Tracks periodic checkpoints and the best parameters by validation metric.
pub(crate) struct BestTracker {
    pub best_step: u64,
    pub best_metric: f64,
    pub best_params: Option<crate::model::ParamSet>,
    higher_is_better: bool,
}

impl BestTracker {
    pub fn new(higher_is_better: bool) -> Self {
        BestTracker { best_step: 0, best_metric: f64::NAN, best_params: None, higher_is_better }
    }

    pub fn consider(&mut self, step: u64, metric: f64, params: &crate::model::ParamSet) {
        let better = match (self.best_params.is_some(), self.higher_is_better) {
            (false, _) => true,
            (true, true) => metric > self.best_metric,
            (true, false) => metric < self.best_metric,
        };
        if better {
            self.best_step = step;
            self.best_metric = metric;
            self.best_params = Some(params.clone());
        }
    }
}

/// Train with the label-smoothed negative log-likelihood (teacher forcing).
/// Checkpoints are saved every `cfg.checkpoint_every` steps and the best
/// checkpoint by validation BLEU is the returned model.
pub fn train_mle(
    mut model: NmtModel,
    corpus: &[(TokenSeq, TokenSeq)],
    valid: &ValidationSet,
    vocab: &Vocab,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(NmtModel, TrainReport), TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let start = Instant::now();
    let mut report = TrainReport::new("bleu", cfg);
    let counts: Vec<usize> = corpus.iter().map(|(s, _)| s.len().max(1)).collect();
    let mut stream = BatchStream::new(&counts, cfg.max_source_tokens_per_batch, cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut tracker = BestTracker::new(true);

    for step in 1..=cfg.steps {
        let batch: Vec<usize> = stream.next_batch().to_vec();
        let results: Result<Vec<(f64, usize, Vec<Tensor>)>, ModelError> = batch
            .par_iter()
            .map(|&idx| {
                let (src, tgt) = &corpus[idx];
                let mut g = Graph::new_training();
                let bound = model.params.bind(&mut g);
                let mut fwd = Forward::new(
                    &mut g,
                    &bound,
                    model.cfg.dropout,
                    dropout_seed(cfg.seed, step, idx),
                );
                let src_ids = model.encoder_ids(src);
                let memory = model.encode(&mut fwd, &src_ids)?;
                let mut tgt_in: Vec<usize> = vec![BOS as usize];
                tgt_in.extend(tgt.ids.iter().map(|&i| i as usize));
                let mut targets: Vec<usize> = tgt.ids.iter().map(|&i| i as usize).collect();
                targets.push(EOS as usize);
                let logits = model.decode_logits(&mut fwd, memory, &tgt_in)?;
                let loss_vec = fwd.g.cross_entropy_ls(logits, &targets, cfg.label_smoothing)?;
                let loss = fwd.g.sum(loss_vec)?;
                let gmap = g.backward(loss)?;
                let grads = model.params.grads_in_order(&bound, &gmap);
                Ok((g.value(loss).item(), targets.len(), grads))
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

        // fixed-order reduction keeps training bit-reproducible
        let mut total_loss = 0.0;
        let mut total_tokens = 0usize;
        let mut grads: Option<Vec<Tensor>> = None;
        for (loss, tokens, g) in results {
            total_loss += loss;
            total_tokens += tokens;
            match &mut grads {
                Some(acc) => add_grads(acc, &g),
                None => grads = Some(g),
            }
        }
        let mut grads = grads.expect("non-empty batch");
        scale_grads(&mut grads, 1.0 / total_tokens as f64);
        adam.step(&mut model.params, &grads, cfg.lr.at(step));
        model.step += 1;
        report.losses.push(super::StepLoss { step, loss: total_loss / total_tokens as f64 });

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
        // run shorter than one checkpoint interval: evaluate the final state
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
