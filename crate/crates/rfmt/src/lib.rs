//! A desk-scale laboratory for reference-free fine-tuning of neural
//! translation models on noisy questions.
//!
//! The crate trains a tiny transformer translation model on a deterministic
//! synthetic language pair, then adapts it to noisy question input using only
//! source-side data: candidates are decoded with beam search and weighted by a
//! composite risk built from a masked-language-model fluency score and a
//! cross-lingual BERTScore adequacy score, with a rule-based grammatical error
//! corrector guarding the adequacy side against source noise.
//!
//! Everything runs on the CPU in 64-bit floats on top of a small tape-based
//! reverse-mode autodiff engine, so every gradient in the system can be
//! checked against central finite differences.
//!
//! Module map:
//!
//! - [`tensor`] — dense tensors, the autodiff tape, and `grad_check`.
//! - [`text`] — vocabulary, word-level tokenization, question-mark
//!   normalization.
//! - [`corpus`] — the synthetic bilingual noisy-question task and its gold
//!   translation oracle.
//! - [`noise`] — character-level noise injection for robust pre-training.
//! - [`gec`] — the rule-based source-side grammatical error corrector.
//! - [`model`] — translation model, masked LM, bilingual embedder, beam
//!   search, checkpoint files.
//! - [`scoring`] — MLM score, BERTScore, GEC-max adequacy loss, composite
//!   risk.
//! - [`training`] — MLE pre-training/fine-tuning, composite-risk MRT,
//!   MRT with BLEU, forward translation.
//! - [`metrics`] — BLEU, TER with shifts, paired bootstrap resampling.
//! - [`rerank`] — the MLM re-ranking baseline.
//! - [`cli`] — the `rfmt` command-line surface and the experiment harness.
//! - [`verify`] — public finite-difference gradient checks over the model
//!   losses.
//!
//! Each major capability has a runnable example under `examples/`; start with
//! `cargo run --release --example synthetic_task`.

pub mod cli;
pub mod corpus;
pub mod gec;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod rerank;
pub mod scoring;
pub mod tensor;
pub mod text;
pub mod training;
pub mod util;
pub mod verify;

pub use tensor::{GradientMap, Graph, NodeId, Tensor, TensorError};
pub use text::{TokenSeq, Vocab};
