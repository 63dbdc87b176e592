//! Corpus and sentence evaluation: BLEU (clipped n-gram precisions with
//! brevity penalty), TER with a greedy block-shift search, and the paired
//! bootstrap significance test. All counting is integral, so scores are
//! identical across platforms and line orderings.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gec::edit_distance_tokens;
use crate::text::split_words;
use crate::util::{derive_rng, label};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("hypothesis/reference length mismatch: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("reference {line} is empty")]
    EmptyReference { line: usize },
    #[error("need at least 100 bootstrap resamples, got {0}")]
    TooFewResamples(usize),
}

const MAX_ORDER: usize = 4;

/// Clipped n-gram match and total counts plus lengths; corpus BLEU is a pure
/// function of these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuCounts {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuCounts {
    pub fn add(&mut self, other: &BleuCounts) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU in [0, 100] from these counts. With `smoothing`, zero-match
    /// orders receive exponentially shrinking pseudo-counts and orders with
    /// no n-grams at all are excluded (effective order).
    pub fn score(&self, smoothing: bool) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        let mut smooth = 1.0f64;
        for n in 0..MAX_ORDER {
            let (m, t) = (self.matches[n], self.totals[n]);
            if t == 0 {
                if smoothing {
                    continue; // shorter than n tokens: drop the order
                }
                return 0.0;
            }
            let p = if m > 0 {
                m as f64 / t as f64
            } else if smoothing {
                smooth *= 2.0;
                1.0 / (smooth * t as f64)
            } else {
                return 0.0;
            };
            log_sum += p.ln();
            orders += 1;
        }
        if orders == 0 {
            return 0.0;
        }
        let geo = (log_sum / orders as f64).exp();
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        100.0 * bp * geo
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut map: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

/// Clipped counts for one sentence pair.
pub fn bleu_counts(hyp: &str, reference: &str) -> BleuCounts {
    let h = split_words(hyp);
    let r = split_words(reference);
    let mut counts = BleuCounts { hyp_len: h.len(), ref_len: r.len(), ..Default::default() };
    for n in 1..=MAX_ORDER {
        let rc = ngram_counts(&r, n);
        let hc = ngram_counts(&h, n);
        let mut matches = 0;
        for (gram, &c) in &hc {
            matches += c.min(rc.get(gram).copied().unwrap_or(0));
        }
        counts.matches[n - 1] = matches;
        counts.totals[n - 1] = h.len().saturating_sub(n - 1);
    }
    counts
}

fn check_lengths(hyps: &[String], refs: &[String]) -> Result<(), MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    Ok(())
}

/// Corpus BLEU over aligned hypothesis/reference lines.
pub fn bleu(hyps: &[String], refs: &[String], smoothing: bool) -> Result<f64, MetricError> {
    check_lengths(hyps, refs)?;
    let mut total = BleuCounts::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&bleu_counts(h, r));
    }
    Ok(total.score(smoothing))
}

/// Smoothed sentence BLEU, for use as an MRT risk signal.
pub fn sentence_bleu(hyp: &str, reference: &str) -> f64 {
    bleu_counts(hyp, reference).score(true)
}

// ── TER ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TerOptions {
    pub shifts: bool,
    /// Greedy shift search moves blocks of at most this many tokens.
    pub max_block: usize,
}

impl Default for TerOptions {
    fn default() -> Self {
        TerOptions { shifts: true, max_block: 10 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TerCounts {
    /// Total edits including shifts.
    pub edits: usize,
    pub shifts: usize,
    pub ref_len: usize,
}

fn contains_span(reference: &[String], block: &[String]) -> bool {
    reference.len() >= block.len() && reference.windows(block.len()).any(|w| w == block)
}

/// Edits-plus-shifts for one sentence pair: a greedy best-shift-first search
/// over contiguous blocks that exactly match a reference span, each shift
/// costing one edit.
pub fn ter_sentence(hyp: &str, reference: &str, opts: TerOptions) -> Result<TerCounts, MetricError> {
    let r = split_words(reference);
    if r.is_empty() {
        return Err(MetricError::EmptyReference { line: 0 });
    }
    let mut h = split_words(hyp);
    let mut shifts = 0usize;
    if opts.shifts {
        loop {
            let base = edit_distance_tokens(&h, &r);
            if base == 0 {
                break;
            }
            let mut best: Option<(usize, Vec<String>)> = None;
            for len in 1..=opts.max_block.min(h.len()) {
                for start in 0..=h.len() - len {
                    let block: Vec<String> = h[start..start + len].to_vec();
                    if !contains_span(&r, &block) {
                        continue;
                    }
                    let mut rest: Vec<String> = Vec::with_capacity(h.len() - len);
                    rest.extend_from_slice(&h[..start]);
                    rest.extend_from_slice(&h[start + len..]);
                    for insert in 0..=rest.len() {
                        if insert == start {
                            continue; // same position, not a shift
                        }
                        let mut moved = Vec::with_capacity(h.len());
                        moved.extend_from_slice(&rest[..insert]);
                        moved.extend_from_slice(&block);
                        moved.extend_from_slice(&rest[insert..]);
                        let e = edit_distance_tokens(&moved, &r);
                        if best.as_ref().map(|(b, _)| e < *b).unwrap_or(true) {
                            best = Some((e, moved));
                        }
                    }
                }
            }
            match best {
                Some((e, moved)) if e + 1 < base => {
                    shifts += 1;
                    h = moved;
                }
                _ => break,
            }
        }
    }
    let edits = shifts + edit_distance_tokens(&h, &r);
    Ok(TerCounts { edits, shifts, ref_len: r.len() })
}

/// Corpus TER: total edits (including shifts) over total reference length.
pub fn ter(hyps: &[String], refs: &[String]) -> Result<f64, MetricError> {
    ter_with(hyps, refs, TerOptions::default()).map(|(score, _)| score)
}

pub fn ter_with(
    hyps: &[String],
    refs: &[String],
    opts: TerOptions,
) -> Result<(f64, TerCounts), MetricError> {
    check_lengths(hyps, refs)?;
    let mut total = TerCounts::default();
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let c = ter_sentence(h, r, opts).map_err(|_| MetricError::EmptyReference { line: i + 1 })?;
        total.edits += c.edits;
        total.shifts += c.shifts;
        total.ref_len += c.ref_len;
    }
    Ok((total.edits as f64 / total.ref_len.max(1) as f64, total))
}

// ── paired bootstrap ─────────────────────────────────────────────────

/// Koehn-style paired bootstrap resampling: the fraction of resamples on
/// which system B's corpus BLEU is at least system A's. Deterministic for a
/// fixed seed.
pub fn paired_bootstrap(
    hyp_a: &[String],
    hyp_b: &[String],
    refs: &[String],
    resamples: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    check_lengths(hyp_a, refs)?;
    check_lengths(hyp_b, refs)?;
    if resamples < 100 {
        return Err(MetricError::TooFewResamples(resamples));
    }
    let n = refs.len();
    if n == 0 {
        return Err(MetricError::LengthMismatch { hyps: 0, refs: 0 });
    }
    let counts_a: Vec<BleuCounts> =
        hyp_a.iter().zip(refs).map(|(h, r)| bleu_counts(h, r)).collect();
    let counts_b: Vec<BleuCounts> =
        hyp_b.iter().zip(refs).map(|(h, r)| bleu_counts(h, r)).collect();
    let mut rng = derive_rng(seed, &[label("bootstrap")]);
    let mut b_wins = 0usize;
    for _ in 0..resamples {
        let mut acc_a = BleuCounts::default();
        let mut acc_b = BleuCounts::default();
        for _ in 0..n {
            let idx = rng.gen_range(0..n);
            acc_a.add(&counts_a[idx]);
            acc_b.add(&counts_b[idx]);
        }
        if acc_b.score(false) >= acc_a.score(false) {
            b_wins += 1;
        }
    }
    Ok(b_wins as f64 / resamples as f64)
}

// ── reports ──────────────────────────────────────────────────────────

/// Evaluation summary with enough stored counts to recompute corpus scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub ter: f64,
    pub question_final_rate: f64,
    pub sentence_bleu: Vec<f64>,
    pub sentence_ter: Vec<f64>,
    pub bleu_counts: BleuCounts,
    pub ter_counts: TerCounts,
    pub tokenizer: String,
    pub shift_block_limit: usize,
    pub lines: usize,
}

/// Fraction of lines whose final token is "?".
pub fn question_final_rate(lines: &[String]) -> f64 {
    if lines.is_empty() {
        return 0.0;
    }
    let q = lines.iter().filter(|l| split_words(l).last().map(|t| t == "?").unwrap_or(false)).count();
    q as f64 / lines.len() as f64
}

pub fn evaluate(hyps: &[String], refs: &[String]) -> Result<EvalReport, MetricError> {
    check_lengths(hyps, refs)?;
    let opts = TerOptions::default();
    let mut bleu_total = BleuCounts::default();
    let mut ter_total = TerCounts::default();
    let mut sentence_bleus = Vec::with_capacity(hyps.len());
    let mut sentence_ters = Vec::with_capacity(hyps.len());
    for (i, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let bc = bleu_counts(h, r);
        sentence_bleus.push(bc.score(true));
        bleu_total.add(&bc);
        let tc = ter_sentence(h, r, opts).map_err(|_| MetricError::EmptyReference { line: i + 1 })?;
        sentence_ters.push(tc.edits as f64 / tc.ref_len as f64);
        ter_total.edits += tc.edits;
        ter_total.shifts += tc.shifts;
        ter_total.ref_len += tc.ref_len;
    }
    Ok(EvalReport {
        bleu: bleu_total.score(false),
        ter: ter_total.edits as f64 / ter_total.ref_len.max(1) as f64,
        question_final_rate: question_final_rate(hyps),
        sentence_bleu: sentence_bleus,
        sentence_ter: sentence_ters,
        bleu_counts: bleu_total,
        ter_counts: ter_total,
        tokenizer: "rfmt word-level v1".to_string(),
        shift_block_limit: opts.max_block,
        lines: hyps.len(),
    })
}
