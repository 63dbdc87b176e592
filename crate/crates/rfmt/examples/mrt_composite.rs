//! The proposed fine-tuning on a small task: pre-train a baseline, train the
//! scorer MLM, then run composite-risk minimum risk training on noisy
//! source-only questions and watch the outputs turn into questions.
//!
//! ```bash
//! cargo run --release --example mrt_composite
//! ```

use rfmt::cli::build_data;
use rfmt::gec::GecCorrector;
use rfmt::metrics::evaluate;
use rfmt::model::{Embedder, MaskedLm, MlmConfig, NmtConfig, NmtModel, OracleEmbedder};
use rfmt::training::{
    forward_translate, train_mle, train_mlm, train_mrt_composite, LrSchedule, MrtScorers,
    TrainConfig, ValidationSet,
};

fn main() {
    let spec = rfmt::corpus::TaskSpec {
        pretrain_size: 2000,
        adapt_size: 700,
        mono_size: 1500,
        adapt_valid_fraction: 100.0 / 700.0,
        adapt_test_fraction: 200.0 / 700.0,
        seed: 11,
        ..Default::default()
    };
    let bundle = build_data(spec, 2).unwrap();
    let vocab = &bundle.vocab;

    // baseline on clean, statement-heavy data
    let pairs: Vec<_> = bundle
        .pretrain_train
        .iter()
        .map(|t| (vocab.tokenize(&t.noisy_src), vocab.tokenize(&t.tgt)))
        .collect();
    let pre_valid = ValidationSet {
        sources: bundle.pretrain_valid.iter().map(|t| vocab.tokenize(&t.noisy_src)).collect(),
        references: bundle.pretrain_valid.iter().map(|t| t.tgt.clone()).collect(),
    };
    let pre_cfg = TrainConfig {
        steps: 1000,
        checkpoint_every: 250,
        lr: LrSchedule::InverseSqrt { scale: 0.08, warmup: 300 },
        seed: 11,
        ..TrainConfig::default()
    };
    println!("pre-training the baseline ...");
    let model = NmtModel::new(NmtConfig::standard(vocab.len()), 11).unwrap();
    let (baseline, _) = train_mle(model, &pairs, &pre_valid, vocab, &pre_cfg, None).unwrap();

    println!("training the scorer MLM ...");
    let mono: Vec<_> = bundle.mono.tgt.iter().map(|l| vocab.tokenize(l)).collect();
    let (mtrain, mvalid) = mono.split_at(mono.len() - 100);
    let mlm = MaskedLm::new(MlmConfig::standard(vocab.len()), 11).unwrap();
    let mlm_cfg = TrainConfig { steps: 700, checkpoint_every: 350, ..pre_cfg.clone() };
    let (mlm, _) = train_mlm(mlm, mtrain, mvalid, &mlm_cfg, None).unwrap();

    // evaluate the baseline on held-out noisy questions
    let test_sources: Vec<_> =
        bundle.adapt.test.iter().map(|t| vocab.tokenize(&t.noisy_src)).collect();
    let refs: Vec<String> = bundle.adapt.test.iter().map(|t| t.tgt.clone()).collect();
    let before = evaluate(&forward_translate(&baseline, &test_sources, vocab, 24).unwrap(), &refs)
        .unwrap();

    // composite-risk MRT on the noisy sources only
    let embedder = Embedder::Oracle(OracleEmbedder::from_dictionary(bundle.task.dictionary()));
    let gec = GecCorrector::from_task(&bundle.task);
    let scorers = MrtScorers { mlm: &mlm, embedder: &embedder, gec: &gec };
    let sources: Vec<_> =
        bundle.adapt.train.iter().map(|t| vocab.tokenize(&t.noisy_src)).collect();
    let valid = ValidationSet {
        sources: bundle.adapt.valid.iter().map(|t| vocab.tokenize(&t.noisy_src)).collect(),
        references: bundle.adapt.valid.iter().map(|t| t.tgt.clone()).collect(),
    };
    let mrt_cfg = TrainConfig {
        steps: 120,
        checkpoint_every: 40,
        lr: LrSchedule::Fixed { lr: 2e-4 },
        seed: 11,
        ..TrainConfig::default()
    };
    println!("running composite-risk MRT on {} source-only sentences ...\n", sources.len());
    let (tuned, report) =
        train_mrt_composite(baseline, &sources, &scorers, &valid, vocab, &mrt_cfg, None).unwrap();
    let after = evaluate(&forward_translate(&tuned, &test_sources, vocab, 24).unwrap(), &refs)
        .unwrap();

    println!("held-out noisy-question test set ({} lines):", refs.len());
    println!("                     BLEU     TER   question-mark rate");
    println!(
        "  baseline        {:>6.2}  {:>6.3}  {:>6.1}%",
        before.bleu,
        before.ter,
        before.question_final_rate * 100.0
    );
    println!(
        "  + composite MRT {:>6.2}  {:>6.3}  {:>6.1}%",
        after.bleu,
        after.ter,
        after.question_final_rate * 100.0
    );
    println!("\nvalidation BLEU at checkpoints: {:?}",
        report.checkpoints.iter().map(|c| (c.step, (c.metric * 10.0).round() / 10.0)).collect::<Vec<_>>());
}
