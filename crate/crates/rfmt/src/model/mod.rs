//! The three trainable networks (translation model, target-side masked LM,
//! bilingual embedder), beam search decoding, and checkpoint persistence.

mod beam;
mod checkpoint;
mod embedder;
mod mlm;
mod params;
mod transformer;

pub use beam::{beam_search, greedy_translate, Candidate};
pub use checkpoint::{
    load_any, load_mlm, load_nmt, read_meta, save_mlm, save_nmt, CheckpointError, CheckpointMeta,
    ModelKind,
};
pub use embedder::{Embedder, OracleEmbedder, TrainedEmbedder};
pub use mlm::{MaskedLm, MlmConfig};
pub use params::{BoundParams, ParamSet};
pub use transformer::{NmtConfig, NmtModel};

pub(crate) use transformer::Forward;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("empty {0} sequence")]
    EmptySequence(&'static str),
    #[error("position {position} out of range for sequence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("invalid beam search arguments: {0}")]
    BadBeam(String),
}
