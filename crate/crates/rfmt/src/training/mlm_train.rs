//! Masked-LM training for the fluency scorer and the bilingual embedder.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::batch::BatchStream;
use super::mle::{add_grads, dropout_seed, is_divergence, scale_grads, BestTracker};
use super::{TrainConfig, TrainError, TrainReport};
use crate::model::{save_mlm, Forward, MaskedLm, ModelError};
use crate::tensor::{Graph, Tensor};
use crate::text::{TokenSeq, MASK};
use crate::util::{derive_rng, label};

const MASK_PROB: f64 = 0.15;

/// Choose masked positions for one sentence (at least one).
fn mask_positions(len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out: Vec<usize> = (0..len).filter(|_| rng.gen::<f64>() < MASK_PROB).collect();
    if out.is_empty() {
        out.push(rng.gen_range(0..len));
    }
    out
}

/// Mean negative log-likelihood at the masked positions of one sentence, as
/// a graph node, plus the masked-token count.
fn masked_loss(
    mlm: &MaskedLm,
    fwd: &mut Forward,
    seq: &TokenSeq,
    positions: &[usize],
) -> Result<(crate::tensor::NodeId, usize), ModelError> {
    let mut ids = seq.ids.clone();
    for &p in positions {
        ids[p] = MASK;
    }
    let wrapped = mlm.wrap_ids(&ids);
    let logits = mlm.logits(fwd, &wrapped)?;
    let lsm = fwd.g.log_softmax(logits, 1)?;
    let coords: Vec<(usize, usize)> =
        positions.iter().map(|&p| (p + 1, seq.ids[p] as usize)).collect();
    let picked = fwd.g.pick(lsm, &coords)?;
    let summed = fwd.g.sum(picked)?;
    let loss = fwd.g.scale(summed, -1.0)?;
    Ok((loss, positions.len()))
}

/// Deterministic masked NLL over a held-out slice (fixed masks per line).
fn validation_nll(mlm: &MaskedLm, valid: &[TokenSeq]) -> Result<f64, TrainError> {
    let results: Result<Vec<(f64, usize)>, ModelError> = valid
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            if seq.is_empty() {
                return Ok((0.0, 0));
            }
            let mut rng = derive_rng(0xbeef, &[label("mlm-valid"), i as u64]);
            let positions = mask_positions(seq.len(), &mut rng);
            let mut g = Graph::new();
            let bound = mlm.params.bind(&mut g);
            let mut fwd = Forward::new(&mut g, &bound, mlm.cfg.dropout, 0);
            let (loss, n) = masked_loss(mlm, &mut fwd, seq, &positions)?;
            Ok((g.value(loss).item(), n))
        })
        .collect();
    let results = results?;
    let total: f64 = results.iter().map(|(l, _)| l).sum();
    let count: usize = results.iter().map(|(_, n)| n).sum();
    Ok(total / count.max(1) as f64)
}

/// Train a masked LM on monolingual lines; the best checkpoint by held-out
/// masked NLL is returned.
pub fn train_mlm(
    mut mlm: MaskedLm,
    corpus: &[TokenSeq],
    valid: &[TokenSeq],
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<(MaskedLm, TrainReport), TrainError> {
    cfg.validate()?;
    let corpus: Vec<&TokenSeq> = corpus.iter().filter(|s| !s.is_empty()).collect();
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let start = Instant::now();
    let mut report = TrainReport::new("masked_nll", cfg);
    let counts: Vec<usize> = corpus.iter().map(|s| s.len()).collect();
    let mut stream = BatchStream::new(&counts, cfg.max_source_tokens_per_batch, cfg.seed);
    let mut adam = Adam::new(&mlm.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut tracker = BestTracker::new(false);

    for step in 1..=cfg.steps {
        let batch: Vec<usize> = stream.next_batch().to_vec();
        let results: Result<Vec<(f64, usize, Vec<Tensor>)>, ModelError> = batch
            .par_iter()
            .map(|&idx| {
                let seq = corpus[idx];
                let mut rng = derive_rng(cfg.seed, &[label("mlm-mask"), step, idx as u64]);
                let positions = mask_positions(seq.len(), &mut rng);
                let mut g = Graph::new_training();
                let bound = mlm.params.bind(&mut g);
                let mut fwd =
                    Forward::new(&mut g, &bound, mlm.cfg.dropout, dropout_seed(cfg.seed, step, idx));
                let (loss, n) = masked_loss(&mlm, &mut fwd, seq, &positions)?;
                let gmap = g.backward(loss)?;
                let grads = mlm.params.grads_in_order(&bound, &gmap);
                Ok((g.value(loss).item(), n, grads))
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
        let mut total_masked = 0usize;
        let mut grads: Option<Vec<Tensor>> = None;
        for (loss, n, g) in results {
            total_loss += loss;
            total_masked += n;
            match &mut grads {
                Some(acc) => add_grads(acc, &g),
                None => grads = Some(g),
            }
        }
        let mut grads = grads.expect("non-empty batch");
        scale_grads(&mut grads, 1.0 / total_masked.max(1) as f64);
        adam.step(&mut mlm.params, &grads, cfg.lr.at(step));
        mlm.step += 1;
        report
            .losses
            .push(super::StepLoss { step, loss: total_loss / total_masked.max(1) as f64 });

        if step % cfg.checkpoint_every == 0 {
            let metric = validation_nll(&mlm, valid)?;
            let path = match ckpt_dir {
                Some(dir) => {
                    let p = dir.join(format!("step{step}.rfmt"));
                    save_mlm(&p, &mlm)?;
                    Some(p.to_string_lossy().into_owned())
                }
                None => None,
            };
            report.checkpoints.push(super::CheckpointEval { step, metric, path });
            tracker.consider(step, metric, &mlm.params);
        }
    }

    if tracker.best_params.is_none() {
        let metric = validation_nll(&mlm, valid)?;
        tracker.consider(mlm.step, metric, &mlm.params);
    }
    mlm.params = tracker.best_params.take().expect("at least one evaluation");
    report.best_step = tracker.best_step;
    report.best_metric = tracker.best_metric;
    if let Some(dir) = ckpt_dir {
        save_mlm(&dir.join("best.rfmt"), &mlm)?;
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((mlm, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlmConfig;
    use crate::text::Vocab;
    use crate::training::LrSchedule;

    #[test]
    fn mlm_learns_a_fixed_pattern() {
        // every sentence ends "q ?": the model should become confident there
        let lines: Vec<String> = ["a b q ?", "b a q ?", "a a q ?", "b b q ?"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let vocab = Vocab::build(&lines, 1).unwrap();
        let seqs: Vec<TokenSeq> = lines.iter().map(|l| vocab.tokenize(l)).collect();
        let cfg = MlmConfig {
            vocab_size: vocab.len(),
            layers: 1,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            dropout: 0.1,
            max_len: 16,
        };
        let mlm = MaskedLm::new(cfg, 3).unwrap();
        let tc = TrainConfig {
            steps: 150,
            checkpoint_every: 50,
            max_source_tokens_per_batch: 32,
            lr: LrSchedule::Fixed { lr: 3e-3 },
            seed: 4,
            ..TrainConfig::default()
        };
        let before = crate::scoring::mlm_score(&mlm, &seqs[0], true).unwrap();
        let (trained, report) = train_mlm(mlm, &seqs, &seqs, &tc, None).unwrap();
        let after = crate::scoring::mlm_score(&trained, &seqs[0], true).unwrap();
        assert!(after > before, "mlm score {before} -> {after}");
        assert!(report.best_metric < report.losses[0].loss, "nll should drop");
        // the learned regularity: "?" is overwhelmingly likely at the end
        let lp = trained.mlm_logprob_at(&seqs[0], 3).unwrap();
        assert!(lp > (0.7f64).ln(), "p(? | ... q _) = {}", lp.exp());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let vocab = Vocab::build(&["a".to_string()], 1).unwrap();
        let cfg = MlmConfig {
            vocab_size: vocab.len(),
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            dropout: 0.0,
            max_len: 16,
        };
        let mlm = MaskedLm::new(cfg, 1).unwrap();
        assert!(matches!(
            train_mlm(mlm, &[], &[], &TrainConfig::default(), None),
            Err(TrainError::EmptyCorpus)
        ));
    }
}
