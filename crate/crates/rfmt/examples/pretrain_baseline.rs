//! Pre-train a small baseline on the clean synthetic corpus and evaluate it
//! on held-out noisy questions.
//!
//! ```bash
//! cargo run --release --example pretrain_baseline
//! ```

use rfmt::cli::build_data;
use rfmt::metrics::evaluate;
use rfmt::model::{NmtConfig, NmtModel};
use rfmt::training::{forward_translate, train_mle, LrSchedule, TrainConfig, ValidationSet};

fn main() {
    let spec = rfmt::corpus::TaskSpec {
        pretrain_size: 1500,
        adapt_size: 400,
        mono_size: 200,
        seed: 2,
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
        steps: 900,
        checkpoint_every: 300,
        lr: LrSchedule::InverseSqrt { scale: 0.08, warmup: 300 },
        seed: 2,
        ..TrainConfig::default()
    };
    let model = NmtModel::new(NmtConfig::standard(vocab.len()), 2).unwrap();
    println!("pre-training on {} clean pairs ...", pairs.len());
    let (model, report) = train_mle(model, &pairs, &valid, vocab, &cfg, None).unwrap();
    println!("best validation BLEU on clean data: {:.2}", report.best_metric);

    // the domain gap: the same model on noisy question input
    let test_sources: Vec<_> =
        bundle.adapt.test.iter().map(|t| vocab.tokenize(&t.noisy_src)).collect();
    let refs: Vec<String> = bundle.adapt.test.iter().map(|t| t.tgt.clone()).collect();
    let hyps = forward_translate(&model, &test_sources, vocab, 24).unwrap();
    let eval = evaluate(&hyps, &refs).unwrap();
    println!("\nnoisy-question test set: BLEU {:.2}, TER {:.3}", eval.bleu, eval.ter);
    println!("question-final-mark rate of outputs: {:.1}%", eval.question_final_rate * 100.0);
    for (t, h) in bundle.adapt.test.iter().zip(&hyps).take(4) {
        println!("  input : {}", t.noisy_src);
        println!("  output: {h}");
        println!("  gold  : {}", t.tgt);
    }
}
