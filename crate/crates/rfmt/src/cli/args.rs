//! clap definitions for the `rfmt` command-line interface.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "rfmt",
    version,
    about = "Reference-free fine-tuning laboratory for noisy question translation"
)]
pub struct Cli {
    /// Emit machine-readable JSON on stdout where applicable.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic task: corpora, splits, monolingual text, vocab.
    GenData {
        /// Task spec JSON (defaults are used when omitted).
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the task seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Minimum token frequency for the vocabulary.
        #[arg(long, default_value_t = 2)]
        min_count: usize,
    },
    /// Train the target-side masked language model.
    TrainMlm {
        /// Monolingual training text, one sentence per line.
        #[arg(long)]
        data: PathBuf,
        /// Held-out lines for checkpoint selection (defaults to a tail slice
        /// of the training data).
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train config JSON (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the train report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the bilingual embedder (a masked LM over mixed-language text).
    TrainEmbedder {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Pre-train the translation baseline on parallel triples.
    Pretrain {
        /// Training triples (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Validation triples (JSONL).
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Robust pre-training: concatenate the clean corpus with three
        /// noised copies (natural 1%, keyboard 5%, vowel 5%).
        #[arg(long)]
        robust: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune with MLE on synthetic parallel data.
    FinetuneMle {
        /// Starting checkpoint.
        #[arg(long)]
        init: PathBuf,
        /// Source-only text; targets are forward-translated with `--init`.
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Pre-built parallel triples (JSONL) as an alternative to --sources.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune with the composite-risk MRT (the proposed method).
    FinetuneMrt {
        #[arg(long)]
        init: PathBuf,
        /// Source-only text, one sentence per line.
        #[arg(long)]
        sources: PathBuf,
        /// Masked LM checkpoint for fluency scoring.
        #[arg(long)]
        mlm: PathBuf,
        /// Task spec JSON (drives the GEC rules and the oracle embedder).
        #[arg(long)]
        task: PathBuf,
        /// Trained bilingual embedder checkpoint; the dictionary oracle is
        /// used when omitted.
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fine-tune with MRT using 1 - sentence BLEU against synthetic
    /// references.
    FinetuneMrtBleu {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        sources: PathBuf,
        /// Reference text aligned with --sources; forward-translated with
        /// `--init` when omitted.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Translate a text file line by line.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Beam width (1 = greedy).
        #[arg(long, default_value_t = 1)]
        beam: usize,
        /// Append "?" to inputs that do not end with one.
        #[arg(long)]
        append_qmark: bool,
        /// Append "?" and then run the grammatical error corrector on the
        /// input before translating (requires --task).
        #[arg(long)]
        gec_pre: bool,
        #[arg(long)]
        task: Option<PathBuf>,
        /// Dump all beam candidates with log-probabilities (JSONL).
        #[arg(long)]
        dump_beam: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
    },
    /// Decode K candidates per line and keep the best by MLM score.
    Rerank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mlm: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(short, default_value_t = 5)]
        k: usize,
        /// Dump every candidate with its score (JSONL).
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Score with the left-to-right masked approximation instead of the
        /// full MLM score.
        #[arg(long)]
        lm_score: bool,
        #[arg(long, default_value_t = 24)]
        max_len: usize,
    },
    /// Score (src, hyp) pairs with the composite risk components.
    Score {
        #[arg(long)]
        mlm: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// Trained embedder checkpoint; dictionary oracle when omitted.
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        /// JSONL lines with fields src and hyp.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        alpha: f64,
        #[arg(long, default_value_t = 0.85)]
        beta: f64,
        /// Use the literal MLM sum instead of the per-token mean.
        #[arg(long)]
        mlm_sum: bool,
    },
    /// BLEU/TER evaluation of a hypothesis file against references.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Write the full report JSON here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Paired bootstrap significance test between two hypothesis files.
    Significance {
        #[arg(long)]
        hyp_a: PathBuf,
        #[arg(long)]
        hyp_b: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply character-level noise to a text file.
    InjectNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        natural: f64,
        #[arg(long, default_value_t = 0.05)]
        keyboard: f64,
        #[arg(long, default_value_t = 0.05)]
        vowel: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the rule-based grammatical error corrector over a text file.
    Gec {
        /// Task spec JSON providing the lexicon and frames.
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build and evaluate the system-comparison table.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Reuse completed stages from previous runs.
        #[arg(long)]
        resume: bool,
        /// Stage cache directory (default: <out-dir>/cache, or $RFMT_CACHE_DIR).
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Sweep the (alpha, beta) risk weights on the proposed system.
    SweepAlphaBeta {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}
