//! The tiny bidirectional masked language model used for fluency scoring.

use serde::{Deserialize, Serialize};

use super::params::{init_tensor, Init, ParamSet};
use super::transformer::{positional_encoding, Forward};
use super::ModelError;
use crate::tensor::{Graph, NodeId};
use crate::text::{TokenSeq, BOS, EOS, MASK};
use crate::util::{label, sha256_raw};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MlmConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl MlmConfig {
    pub fn standard(vocab_size: usize) -> Self {
        MlmConfig { vocab_size, layers: 2, heads: 2, d_model: 64, d_ff: 128, dropout: 0.2, max_len: 64 }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size == 0 || self.layers == 0 || self.max_len < 4 {
            return Err(ModelError::BadConfig("degenerate architecture".into()));
        }
        Ok(())
    }

    pub fn arch_hash(&self) -> [u8; 32] {
        let desc = format!(
            "mlm-v1 vocab={} layers={} heads={} d={} ff={} maxlen={}",
            self.vocab_size, self.layers, self.heads, self.d_model, self.d_ff, self.max_len
        );
        sha256_raw(desc.as_bytes())
    }
}

/// Bidirectional transformer over the shared vocabulary with a MASK token.
#[derive(Debug, Clone)]
pub struct MaskedLm {
    pub cfg: MlmConfig,
    pub params: ParamSet,
    pub step: u64,
}

impl MaskedLm {
    pub fn new(cfg: MlmConfig, seed: u64) -> Result<MaskedLm, ModelError> {
        cfg.validate()?;
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let hd = cfg.head_dim();
        let seed = seed ^ label("mlm");
        let mut p = ParamSet::new();
        let mat = |p: &mut ParamSet, name: String, shape: Vec<usize>| {
            let t = init_tensor(seed, &name, shape, Init::Xavier);
            p.insert(name, t);
        };
        let ln = |p: &mut ParamSet, prefix: String| {
            p.insert(format!("{prefix}.g"), init_tensor(seed, &prefix, vec![d], Init::Ones));
            p.insert(format!("{prefix}.b"), init_tensor(seed, &prefix, vec![d], Init::Zeros));
        };
        p.insert("embed", init_tensor(seed, "embed", vec![v, d], Init::Embedding));
        for l in 0..cfg.layers {
            for h in 0..cfg.heads {
                mat(&mut p, format!("enc.{l}.attn.h{h}.wq"), vec![d, hd]);
                mat(&mut p, format!("enc.{l}.attn.h{h}.wk"), vec![d, hd]);
                mat(&mut p, format!("enc.{l}.attn.h{h}.wv"), vec![d, hd]);
            }
            mat(&mut p, format!("enc.{l}.attn.wo"), vec![d, d]);
            ln(&mut p, format!("enc.{l}.ln1"));
            mat(&mut p, format!("enc.{l}.ff.w1"), vec![d, f]);
            p.insert(format!("enc.{l}.ff.b1"), init_tensor(seed, &format!("enc.{l}.ff.b1"), vec![f], Init::Zeros));
            mat(&mut p, format!("enc.{l}.ff.w2"), vec![f, d]);
            p.insert(format!("enc.{l}.ff.b2"), init_tensor(seed, &format!("enc.{l}.ff.b2"), vec![d], Init::Zeros));
            ln(&mut p, format!("enc.{l}.ln2"));
        }
        ln(&mut p, "enc.norm".to_string());
        // zero-init output projection: logits start exactly uniform
        p.insert("out.w", init_tensor(seed, "out.w", vec![d, v], Init::Zeros));
        p.insert("out.b", init_tensor(seed, "out.b", vec![v], Init::Zeros));
        Ok(MaskedLm { cfg, params: p, step: 0 })
    }

    /// Wrap token ids as `[BOS, tokens.., EOS]`.
    pub(crate) fn wrap_ids(&self, ids: &[u32]) -> Vec<usize> {
        let mut out = Vec::with_capacity(ids.len() + 2);
        out.push(BOS as usize);
        out.extend(ids.iter().map(|&i| i as usize));
        out.push(EOS as usize);
        out
    }

    /// Final-layer hidden states for wrapped input ids.
    pub(crate) fn hidden(
        &self,
        fwd: &mut Forward,
        wrapped_ids: &[usize],
    ) -> Result<NodeId, ModelError> {
        let cfg = &self.cfg;
        let table = fwd.bound.id("embed");
        let emb = fwd.g.embedding_gather(table, wrapped_ids)?;
        let emb = fwd.g.scale(emb, (cfg.d_model as f64).sqrt())?;
        let pos = fwd.g.constant(positional_encoding(wrapped_ids.len(), cfg.d_model));
        let mut x = fwd.g.add(emb, pos)?;
        x = fwd.apply_dropout(x)?;
        for l in 0..cfg.layers {
            let normed = fwd.layer_norm_by(&format!("enc.{l}.ln1"), x)?;
            let a = fwd.attention_by(
                &format!("enc.{l}.attn"),
                cfg.heads,
                cfg.head_dim(),
                normed,
                normed,
                None,
            )?;
            let a = fwd.apply_dropout(a)?;
            x = fwd.g.add(x, a)?;
            let normed = fwd.layer_norm_by(&format!("enc.{l}.ln2"), x)?;
            let f = fwd.ffn_by(&format!("enc.{l}.ff"), normed)?;
            let f = fwd.apply_dropout(f)?;
            x = fwd.g.add(x, f)?;
        }
        fwd.layer_norm_by("enc.norm", x)
    }

    /// Logits over the vocabulary at every wrapped position.
    pub(crate) fn logits(
        &self,
        fwd: &mut Forward,
        wrapped_ids: &[usize],
    ) -> Result<NodeId, ModelError> {
        let h = self.hidden(fwd, wrapped_ids)?;
        let w = fwd.bound.id("out.w");
        let b = fwd.bound.id("out.b");
        let logits = fwd.g.matmul(h, w)?;
        Ok(fwd.g.add(logits, b)?)
    }

    fn check_ids(&self, seq: &TokenSeq) -> Result<(), ModelError> {
        if let Some(&bad) = seq.ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id: bad, vocab: self.cfg.vocab_size });
        }
        Ok(())
    }

    /// Log-probability of the true token at `position`: the token is
    /// replaced by MASK for the forward pass and read back from the
    /// full-vocabulary log-softmax at that position.
    pub fn mlm_logprob_at(&self, tokens: &TokenSeq, position: usize) -> Result<f64, ModelError> {
        let row = self.mlm_distribution_at(tokens, position)?;
        Ok(row[tokens.ids[position] as usize])
    }

    /// Full log-probability distribution at a masked position.
    pub fn mlm_distribution_at(
        &self,
        tokens: &TokenSeq,
        position: usize,
    ) -> Result<Vec<f64>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence("mlm input"));
        }
        if position >= tokens.len() {
            return Err(ModelError::PositionOutOfRange { position, len: tokens.len() });
        }
        self.check_ids(tokens)?;
        let mut ids = tokens.ids.clone();
        ids[position] = MASK;
        let wrapped = self.wrap_ids(&ids);
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let mut fwd = Forward::new(&mut g, &bound, self.cfg.dropout, 0);
        let logits = self.logits(&mut fwd, &wrapped)?;
        let lsm = g.log_softmax(logits, 1)?;
        let v = self.cfg.vocab_size;
        let row = position + 1; // offset for BOS
        Ok(g.value(lsm).data()[row * v..(row + 1) * v].to_vec())
    }

    /// Per-position masked log-probabilities for several sequences, sharing
    /// one graph (parameters are bound once). Equivalent to calling
    /// [`MaskedLm::mlm_logprob_at`] position by position.
    pub fn pseudo_logprobs(&self, seqs: &[&TokenSeq]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let mut out = Vec::with_capacity(seqs.len());
        for seq in seqs {
            if seq.is_empty() {
                return Err(ModelError::EmptySequence("mlm input"));
            }
            self.check_ids(seq)?;
            let mut lps = Vec::with_capacity(seq.len());
            for pos in 0..seq.len() {
                let mut ids = seq.ids.clone();
                ids[pos] = MASK;
                let wrapped = self.wrap_ids(&ids);
                let mut fwd = Forward::new(&mut g, &bound, self.cfg.dropout, 0);
                let hidden = self.hidden(&mut fwd, &wrapped)?;
                // project only the masked row through the vocabulary matrix
                let row = fwd.g.slice(hidden, 0, pos + 1, 1)?;
                let w = bound.id("out.w");
                let b = bound.id("out.b");
                let logits = fwd.g.matmul(row, w)?;
                let logits = fwd.g.add(logits, b)?;
                let lsm = g.log_softmax(logits, 1)?;
                let picked = g.pick(lsm, &[(0, seq.ids[pos] as usize)])?;
                lps.push(g.value(picked).data()[0]);
            }
            out.push(lps);
        }
        Ok(out)
    }
}
