//! Train the target-side masked LM and show the fluency contrast that
//! drives the composite risk: after question-mark normalization, a
//! statement-shaped candidate scores much worse than a proper question.
//!
//! ```bash
//! cargo run --release --example mlm_fluency
//! ```

use rfmt::corpus::{Task, TaskSpec};
use rfmt::model::{MaskedLm, MlmConfig};
use rfmt::scoring::mlm_score;
use rfmt::text::{normalize_question, Vocab};
use rfmt::training::{train_mlm, LrSchedule, TrainConfig};

fn main() {
    let task = Task::new(TaskSpec { mono_size: 3000, seed: 5, ..TaskSpec::default() }).unwrap();
    let mono = task.gen_monolingual().unwrap();
    let vocab = Vocab::build(&mono.tgt, 1).unwrap();
    let seqs: Vec<_> = mono.tgt.iter().map(|l| vocab.tokenize(l)).collect();
    let (train, valid) = seqs.split_at(seqs.len() - 150);

    let cfg = TrainConfig {
        steps: 800,
        checkpoint_every: 200,
        lr: LrSchedule::InverseSqrt { scale: 0.08, warmup: 200 },
        seed: 5,
        ..TrainConfig::default()
    };
    let mlm = MaskedLm::new(MlmConfig::standard(vocab.len()), 5).unwrap();
    println!("training the target-side MLM on {} monolingual lines ...", train.len());
    let (mlm, report) = train_mlm(mlm, train, valid, &cfg, None).unwrap();
    println!("held-out masked NLL: {:.3}\n", report.best_metric);

    // statement translation, the same string question-mark normalized, and
    // the proper question form (with the interrogative particle)
    let statement = task.gold_translate("it works with alpha .").unwrap();
    let question = task.gold_translate("does it work with alpha ?").unwrap();
    let cases = [
        ("statement form", statement.clone()),
        ("statement + ?", normalize_question(&statement)),
        ("question form", question),
    ];
    println!("per-token MLM scores (higher = more fluent):");
    for (name, text) in &cases {
        let seq = vocab.tokenize(text);
        let score = mlm_score(&mlm, &seq, true).unwrap();
        println!("  {:16} {:40} {:8.3}", name, text, score);
    }
    println!("\nthe normalization step rewrites every candidate to end in \"?\",");
    println!("so only candidates that are fluent *as questions* score well.");
}
