//! Character-level noise injection and the rule-based grammatical error
//! corrector, including the measured fraction of noisy sources the
//! corrector recovers exactly.
//!
//! ```bash
//! cargo run --release --example noise_and_gec
//! ```

use rfmt::corpus::{Task, TaskSpec};
use rfmt::gec::{Corrector, GecCorrector};
use rfmt::noise::{inject_noise_with_stats, NoiseConfig};

fn main() {
    // the robust pre-training noise profile: 1% natural, 5% keyboard, 5% vowels
    let cfg = NoiseConfig::robust_default(11);
    let text = "does it work with the samsung a50s or should i buy the xylo instead ".repeat(2000);
    let (noisy, stats) = inject_noise_with_stats(&text, &cfg);
    println!("noised {} chars", stats.chars_seen);
    println!("  natural rate:  {:.3}% (configured 1%)", stats.natural_rate() * 100.0);
    println!("  keyboard rate: {:.3}% (configured 5%)", stats.keyboard_rate() * 100.0);
    println!("  vowel rate:    {:.3}% (configured 5%)", stats.vowel_rate() * 100.0);
    println!("  sample: {}", &noisy[..70]);

    let task = Task::new(TaskSpec { adapt_size: 1500, seed: 3, ..TaskSpec::default() }).unwrap();
    let gec = GecCorrector::from_task(&task);

    println!("\ncorrector on statement-form and misspelled questions:");
    for s in [
        "It works in samsung a50s",
        "what is the defference between the two",
        "it wrks with alpha",
        "the tripod lasts long",
        "does it work with alpha ?",
    ] {
        println!("  {:45} -> {}", s, gec.correct(s));
    }

    // measured (not asserted) recovery rate over a noisy corpus: how often
    // the corrector reconstructs the clean source exactly
    let corpus = task.gen_adapt().unwrap();
    let recovered = corpus.iter().filter(|t| gec.correct(&t.noisy_src) == t.clean_src).count();
    println!(
        "\nGEC exact-recovery rate on {} noisy questions: {:.1}%",
        corpus.len(),
        recovered as f64 / corpus.len() as f64 * 100.0
    );
    let idempotent = corpus.iter().all(|t| {
        let once = gec.correct(&t.noisy_src);
        gec.correct(&once) == once
    });
    println!("corrector idempotent on its own output: {idempotent}");
}
