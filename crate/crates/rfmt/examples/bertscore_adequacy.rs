//! Cross-lingual adequacy scoring: greedy-matching precision/recall/F1 over
//! lemma-shared embeddings, and the corrector-guarded max that keeps source
//! noise from penalizing good translations.
//!
//! ```bash
//! cargo run --release --example bertscore_adequacy
//! ```

use rfmt::corpus::{Task, TaskSpec};
use rfmt::gec::{GecCorrector, IdentityCorrector};
use rfmt::model::{Embedder, OracleEmbedder};
use rfmt::scoring::{bert_loss, bertscore};
use rfmt::text::{normalize_question, Vocab};

fn main() {
    let task = Task::new(TaskSpec::default()).unwrap();
    let embedder = Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary()));
    let corpus_text = vec![
        "does it work with alpha ? it works with alpha".to_string(),
        task.gold_translate("does it work with alpha ?").unwrap(),
        task.gold_translate("does it work with bravo ?").unwrap(),
    ];
    let vocab = Vocab::build(&corpus_text, 1).unwrap();

    // raw precision/recall/F1 between a source and its gold translation
    let x = vocab.tokenize("does it work with alpha ?");
    let y = vocab.tokenize(&task.gold_translate("does it work with alpha ?").unwrap());
    let t = bertscore(&embedder.embed_tokens(&x).unwrap(), &embedder.embed_tokens(&y).unwrap())
        .unwrap();
    println!("source vs gold translation: P={:.3} R={:.3} F={:.3}", t.precision, t.recall, t.f1);

    let wrong = vocab.tokenize(&task.gold_translate("does it work with bravo ?").unwrap());
    let t2 = bertscore(&embedder.embed_tokens(&x).unwrap(), &embedder.embed_tokens(&wrong).unwrap())
        .unwrap();
    println!("source vs wrong-entity translation: F={:.3}", t2.f1);

    // the corrector-guarded loss on a statement-form noisy source
    let gec = GecCorrector::from_task(&task);
    let noisy = vocab.tokenize(&normalize_question("it works with alpha"));
    let without = bert_loss(&noisy, &y, &embedder, &IdentityCorrector, &vocab).unwrap();
    let with_gec = bert_loss(&noisy, &y, &embedder, &gec, &vocab).unwrap();
    println!("\nnoisy source \"it works with alpha\", gold-question candidate:");
    println!("  adequacy loss without correction: {without:.4}");
    println!("  adequacy loss with GEC max:       {with_gec:.4}");
    println!("the max() over raw and corrected source never hurts: {}", with_gec <= without);
}
