//! The re-ranking baseline: decode K candidates and pick the one the masked
//! LM finds most fluent.
//!
//! ```bash
//! cargo run --release --example rerank_mlm
//! ```

use rfmt::cli::build_data;
use rfmt::model::{MaskedLm, MlmConfig, NmtConfig, NmtModel};
use rfmt::rerank::{rerank, RerankScorer};
use rfmt::training::{train_mle, train_mlm, LrSchedule, TrainConfig, ValidationSet};

fn main() {
    let spec = rfmt::corpus::TaskSpec {
        pretrain_size: 1200,
        adapt_size: 300,
        mono_size: 1500,
        seed: 6,
        ..Default::default()
    };
    let bundle = build_data(spec, 1).unwrap();
    let vocab = &bundle.vocab;

    let pairs: Vec<_> = bundle
        .pretrain_train
        .iter()
        .map(|t| (vocab.tokenize(&t.noisy_src), vocab.tokenize(&t.tgt)))
        .collect();
    let valid = ValidationSet {
        sources: bundle.pretrain_valid.iter().map(|t| vocab.tokenize(&t.noisy_src)).collect(),
        references: bundle.pretrain_valid.iter().map(|t| t.tgt.clone()).collect(),
    };
    let cfg = TrainConfig {
        steps: 700,
        checkpoint_every: 350,
        lr: LrSchedule::InverseSqrt { scale: 0.08, warmup: 250 },
        seed: 6,
        ..TrainConfig::default()
    };
    println!("training the translation model and the masked LM ...");
    let model = NmtModel::new(NmtConfig::standard(vocab.len()), 6).unwrap();
    let (model, _) = train_mle(model, &pairs, &valid, vocab, &cfg, None).unwrap();

    let mono: Vec<_> = bundle.mono.tgt.iter().map(|l| vocab.tokenize(l)).collect();
    let (mtrain, mvalid) = mono.split_at(mono.len() - 100);
    let mlm = MaskedLm::new(MlmConfig::standard(vocab.len()), 6).unwrap();
    let (mlm, _) = train_mlm(mlm, mtrain, mvalid, &cfg, None).unwrap();

    for input in ["does it work in samsung .", "it will fit in xylo"] {
        let src = vocab.tokenize(input);
        let choice = rerank(&model, &mlm, vocab, &src, 5, 16, RerankScorer::Mlm, true).unwrap();
        println!("\ninput: {input}");
        for (i, (c, s)) in choice.candidates.iter().zip(&choice.scores).enumerate() {
            let marker = if i == choice.chosen_index { "->" } else { "  " };
            println!("  {marker} mlm {s:>7.3}  logp {:>8.3}  {}", c.total_logprob, c.tokens.surface());
        }
    }
}
