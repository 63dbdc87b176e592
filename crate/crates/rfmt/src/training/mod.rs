//! The four trainers: MLE pre-training/fine-tuning, composite-risk minimum
//! risk training, MRT with a sentence-BLEU risk, and forward translation for
//! synthetic data, plus masked-LM training for the scorer models.

mod adam;
mod batch;
mod mle;
mod mlm_train;
mod mrt;

pub use adam::{Adam, LrSchedule};
pub use batch::assemble_batches;
pub use mle::{train_mle, ValidationSet};
pub use mlm_train::train_mlm;
pub use mrt::{forward_translate, train_mrt_bleu, train_mrt_composite, MrtScorers};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::ScoreWeights;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] crate::model::CheckpointError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: u64, report: Box<TrainReport> },
}

/// How candidate risk weights the sequence log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    /// Sum over candidates of (sum of token log-probs) x risk.
    Literal,
    /// Expected risk under the renormalized candidate distribution
    /// (softmax over the candidates' total log-probs).
    Normalized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_batch_tokens")]
    pub max_source_tokens_per_batch: usize,
    #[serde(default = "d_steps")]
    pub steps: u64,
    #[serde(default = "d_ckpt")]
    pub checkpoint_every: u64,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default = "d_smooth")]
    pub label_smoothing: f64,
    /// Beam width for MRT candidate generation.
    #[serde(default = "d_k")]
    pub beam_k: usize,
    #[serde(default)]
    pub weights: ScoreWeights,
    #[serde(default = "d_risk_mode")]
    pub risk_mode: RiskMode,
    /// Subtract the per-sentence mean risk across candidates.
    #[serde(default)]
    pub risk_baseline: bool,
    #[serde(default = "d_decode_len")]
    pub max_decode_len: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_batch_tokens() -> usize {
    200
}
fn d_steps() -> u64 {
    5000
}
fn d_ckpt() -> u64 {
    250
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.98
}
fn d_eps() -> f64 {
    1e-9
}
fn d_smooth() -> f64 {
    0.1
}
fn d_k() -> usize {
    5
}
fn d_risk_mode() -> RiskMode {
    RiskMode::Normalized
}
fn d_decode_len() -> usize {
    24
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_source_tokens_per_batch == 0
            || self.steps == 0
            || self.checkpoint_every == 0
            || self.max_decode_len == 0
        {
            return Err(TrainError::BadConfig("counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::BadConfig(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if self.beam_k == 0 {
            return Err(TrainError::BadConfig("beam width must be positive".into()));
        }
        Ok(())
    }

    pub fn validate_for_mrt(&self) -> Result<(), TrainError> {
        self.validate()?;
        if self.beam_k < 2 {
            return Err(TrainError::BadConfig("MRT needs a beam width of at least 2".into()));
        }
        Ok(())
    }
}

/// One recorded training step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub step: u64,
    pub metric: f64,
    pub path: Option<String>,
}

/// Loss series, checkpoint evaluations, and run provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<StepLoss>,
    pub checkpoints: Vec<CheckpointEval>,
    /// "bleu" (higher is better) or "masked_nll" (lower is better).
    pub metric_name: String,
    pub best_step: u64,
    pub best_metric: f64,
    pub skipped_sentences: usize,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub config: TrainConfig,
}

impl TrainReport {
    pub(crate) fn new(metric_name: &str, cfg: &TrainConfig) -> Self {
        TrainReport {
            losses: Vec::new(),
            checkpoints: Vec::new(),
            metric_name: metric_name.to_string(),
            best_step: 0,
            best_metric: f64::NAN,
            skipped_sentences: 0,
            wall_clock_secs: 0.0,
            seed: cfg.seed,
            config: cfg.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_match_the_training_recipe() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.max_source_tokens_per_batch, 200);
        assert_eq!(cfg.steps, 5000);
        assert_eq!(cfg.checkpoint_every, 250);
        assert_eq!(cfg.adam_beta1, 0.9);
        assert_eq!(cfg.adam_beta2, 0.98);
        assert_eq!(cfg.label_smoothing, 0.1);
        assert_eq!(cfg.beam_k, 5);
        assert_eq!(cfg.weights.alpha, 0.15);
        assert_eq!(cfg.weights.beta, 0.85);
        assert_eq!(cfg.risk_mode, RiskMode::Normalized);
        cfg.validate().unwrap();
    }

    #[test]
    fn mrt_requires_k_of_two() {
        let cfg = TrainConfig { beam_k: 1, ..TrainConfig::default() };
        assert!(cfg.validate().is_ok());
        assert!(cfg.validate_for_mrt().is_err());
    }
}
