//! The desk-scale system comparison, driven through the experiment harness
//! at reduced sizes: baseline vs MLE fine-tuning vs MRT-with-BLEU vs the
//! composite-risk method, median over two seeds.
//!
//! ```bash
//! cargo run --release --example full_comparison
//! ```

use rfmt::cli::{run_experiment, ExperimentSpec};
use rfmt::corpus::TaskSpec;
use rfmt::training::LrSchedule;

fn main() {
    let dir = std::env::temp_dir().join("rfmt-full-comparison");
    let task = TaskSpec {
        pretrain_size: 1600,
        adapt_size: 700,
        mono_size: 1200,
        adapt_valid_fraction: 100.0 / 700.0,
        adapt_test_fraction: 200.0 / 700.0,
        pretrain_valid_fraction: 100.0 / 1600.0,
        ..TaskSpec::default()
    };
    let mut spec = ExperimentSpec { task: Some(task), seeds: vec![1, 2], ..ExperimentSpec::default() };
    spec.pretrain.steps = 900;
    spec.pretrain.checkpoint_every = 300;
    spec.mlm_train.steps = 600;
    spec.mlm_train.checkpoint_every = 300;
    spec.finetune_mle.steps = 250;
    spec.finetune_mle.checkpoint_every = 125;
    spec.finetune_mrt.steps = 100;
    spec.finetune_mrt.checkpoint_every = 50;
    spec.finetune_mrt.lr = LrSchedule::Fixed { lr: 2e-4 };
    spec.resamples = 500;

    println!("building 4 systems x 2 seeds (everything shares the cached baseline) ...");
    let table = run_experiment(&spec, &dir, &dir.join("cache"), true).unwrap();
    print!("\n{}", table.render());
    println!("results written under {}", dir.display());
}
