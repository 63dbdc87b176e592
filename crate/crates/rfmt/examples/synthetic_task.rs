//! A tour of the synthetic bilingual noisy-question task: templates, the
//! gold translation oracle, noise phenomena, and edit-log provenance.
//!
//! ```bash
//! cargo run --release --example synthetic_task
//! ```

use rfmt::corpus::{Task, TaskSpec};

fn main() {
    let spec = TaskSpec { adapt_size: 2000, seed: 7, ..TaskSpec::default() };
    let task = Task::new(spec).unwrap();

    println!("gold translations (dictionary: reverse the word, append 'a'):");
    for src in [
        "does it work with alpha ?",
        "will it fit in xylo ?",
        "it works with alpha .",
        "what is the difference between kilo and lima ?",
    ] {
        println!("  {:40} -> {}", src, task.gold_translate(src).unwrap());
    }

    let corpus = task.gen_adapt().unwrap();
    println!("\nsample noisy triples:");
    for t in corpus.iter().take(6) {
        println!("  clean : {}", t.clean_src);
        println!("  noisy : {}", t.noisy_src);
        println!("  target: {}", t.tgt);
        println!("  edits : declarative={} qmark={:?} typo={:?}", t.edit_log.declarative,
                 t.edit_log.qmark, t.edit_log.typo.as_ref().map(|e| &e.original));
        println!();
    }

    let n = corpus.len() as f64;
    let decl = corpus.iter().filter(|t| t.edit_log.declarative).count() as f64 / n;
    let qmark = corpus.iter().filter(|t| t.edit_log.qmark.is_some()).count() as f64 / n;
    let typo = corpus.iter().filter(|t| t.edit_log.typo.is_some()).count() as f64 / n;
    println!("empirical noise rates over {} lines:", corpus.len());
    println!("  declarative rephrasing: {:.1}%", decl * 100.0);
    println!("  question-mark loss:     {:.1}%", qmark * 100.0);
    println!("  typos:                  {:.1}%", typo * 100.0);

    // every edit log reverse-applies to the clean source
    let ok = corpus.iter().all(|t| task.reverse_apply_edits(t).unwrap() == t.clean_src);
    println!("edit logs reverse-apply cleanly: {ok}");
}
