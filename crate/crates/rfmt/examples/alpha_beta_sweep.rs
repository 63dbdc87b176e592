//! Sensitivity of the composite risk to the fluency/adequacy mixing weights:
//! sweep (alpha, beta) pairs on a reduced task and compare.
//!
//! ```bash
//! cargo run --release --example alpha_beta_sweep
//! ```

use rfmt::cli::{run_sweep, ExperimentSpec};
use rfmt::corpus::TaskSpec;
use rfmt::training::LrSchedule;

fn main() {
    let dir = std::env::temp_dir().join("rfmt-alpha-beta-sweep");
    let task = TaskSpec {
        pretrain_size: 1400,
        adapt_size: 500,
        mono_size: 1000,
        adapt_valid_fraction: 0.16,
        adapt_test_fraction: 0.3,
        pretrain_valid_fraction: 0.0625,
        ..TaskSpec::default()
    };
    let mut spec = ExperimentSpec { task: Some(task), seeds: vec![1], ..ExperimentSpec::default() };
    spec.pretrain.steps = 800;
    spec.pretrain.checkpoint_every = 400;
    spec.mlm_train.steps = 500;
    spec.mlm_train.checkpoint_every = 250;
    spec.finetune_mrt.steps = 80;
    spec.finetune_mrt.checkpoint_every = 40;
    spec.finetune_mrt.lr = LrSchedule::Fixed { lr: 2e-4 };
    // the full grid plus an adequacy-only corner for contrast
    spec.sweep = vec![[0.5, 0.5], [0.3, 0.7], [0.15, 0.85], [0.1, 0.9], [0.0, 1.0]];

    println!("sweeping {} weight pairs (stages are shared through the cache) ...", spec.sweep.len());
    let table = run_sweep(&spec, &dir, &dir.join("cache"), true).unwrap();
    print!("\n{table}");
}
