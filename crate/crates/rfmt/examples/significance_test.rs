//! Paired bootstrap resampling over corpus BLEU, plus the BLEU/TER hand
//! cases that pin the metric implementations.
//!
//! ```bash
//! cargo run --release --example significance_test
//! ```

use rfmt::metrics::{bleu, bleu_counts, paired_bootstrap, sentence_bleu, ter_sentence, TerOptions};

fn lines(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn main() {
    // clipped n-gram counting
    let c = bleu_counts("the the the the the the the", "the cat is on the mat");
    println!("clipped unigram precision: {}/{}", c.matches[0], c.totals[0]);

    // TER with and without block shifts
    let with = ter_sentence("b a", "a b", TerOptions::default()).unwrap();
    let without = ter_sentence("b a", "a b", TerOptions { shifts: false, max_block: 10 }).unwrap();
    println!("TER \"b a\" vs \"a b\": {} edits with shifts, {} without", with.edits, without.edits);

    // smoothed sentence BLEU stays positive without overlap
    println!("smoothed sentence BLEU, zero overlap: {:.3}", sentence_bleu("a b c", "x y z"));

    // paired bootstrap: a clearly better system against a degraded copy
    let refs = lines(&[
        "ahplaa htiwa krowa tia seoda ka ?",
        "olyxa nia tifa tia lliwa ka ?",
        "arreisa troppusa tia seoda ka ?",
        "foorpretawa retuora ehta sia ka ?",
        "tahwa sia ehta ecnereffida neewteba ehta owta ka ?",
        "cebeuqa htiwa elbitapmoca tia sia ka ?",
        "ognata htiwa tia esua naca ia ka ?",
        "amila nia krowa tia seoda ka ?",
    ]);
    let good = refs.clone();
    let degraded: Vec<String> = refs
        .iter()
        .map(|r| r.replace("ka ?", ".").replace("seoda", "seo"))
        .collect();
    println!("corpus BLEU good {:.1}, degraded {:.1}", bleu(&good, &refs, false).unwrap(), bleu(&degraded, &refs, false).unwrap());

    let p_same = paired_bootstrap(&good, &good, &refs, 1000, 7).unwrap();
    let p_degraded = paired_bootstrap(&good, &degraded, &refs, 1000, 7).unwrap();
    println!("p(identical system >= itself): {p_same:.3}");
    println!("p(degraded >= good):           {p_degraded:.3}");
}
