//! Decode n-best candidate lists with beam search and print each path with
//! its log-likelihood, the way a beam tree is usually inspected.
//!
//! ```bash
//! cargo run --release --example beam_candidates
//! ```

use rfmt::cli::build_data;
use rfmt::model::{beam_search, NmtConfig, NmtModel};
use rfmt::training::{train_mle, LrSchedule, TrainConfig, ValidationSet};

fn main() {
    let spec = rfmt::corpus::TaskSpec {
        pretrain_size: 1200,
        adapt_size: 300,
        mono_size: 200,
        seed: 4,
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
        seed: 4,
        ..TrainConfig::default()
    };
    let model = NmtModel::new(NmtConfig::standard(vocab.len()), 4).unwrap();
    println!("training a quick baseline ...");
    let (model, _) = train_mle(model, &pairs, &valid, vocab, &cfg, None).unwrap();

    for input in ["does it support kilo .", "it supports kilo"] {
        let src = vocab.tokenize(input);
        let cands = beam_search(&model, vocab, &src, 5, 16).unwrap();
        println!("\nbeam width 5 for {input:?}:");
        for (rank, c) in cands.iter().enumerate() {
            println!(
                "  #{rank} logp {:>8.3} finished={} : {}",
                c.total_logprob,
                c.finished,
                c.tokens.surface()
            );
        }
        // candidates are distinct and sorted by total log-probability
        let sorted = cands.windows(2).all(|w| w[0].total_logprob >= w[1].total_logprob);
        println!("  sorted by log-probability: {sorted}");
    }
}
