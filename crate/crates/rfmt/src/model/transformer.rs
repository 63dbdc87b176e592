//! The tiny transformer encoder-decoder translation model.

use serde::{Deserialize, Serialize};

use super::params::{init_tensor, BoundParams, Init, ParamSet};
use super::ModelError;
use crate::tensor::{Graph, NodeId, Tensor};
use crate::text::{TokenSeq, BOS, EOS};
use crate::util::{label, sha256_raw};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NmtConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl NmtConfig {
    /// The standard desk-scale architecture; `vocab_size` comes from data.
    pub fn standard(vocab_size: usize) -> Self {
        NmtConfig { vocab_size, layers: 2, heads: 2, d_model: 64, d_ff: 128, dropout: 0.2, max_len: 64 }
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
            "nmt-v1 vocab={} layers={} heads={} d={} ff={} maxlen={}",
            self.vocab_size, self.layers, self.heads, self.d_model, self.d_ff, self.max_len
        );
        sha256_raw(desc.as_bytes())
    }
}

/// Sinusoidal position encodings for positions `0..len`.
pub(crate) fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for t in 0..len {
        for i in 0..d / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[t * d + 2 * i] = (t as f64 * rate).sin();
            data[t * d + 2 * i + 1] = (t as f64 * rate).cos();
        }
    }
    Tensor::matrix(len, d, data)
}

fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = -1e9;
        }
    }
    Tensor::matrix(n, n, data)
}

/// Forward-pass context: dropout seeds are derived from `(seed, counter)` so
/// a rebuilt graph draws identical masks.
pub(crate) struct Forward<'a> {
    pub(crate) g: &'a mut Graph,
    pub(crate) bound: &'a BoundParams,
    dropout_p: f64,
    dropout_seed: u64,
    dropout_counter: u64,
}

impl<'a> Forward<'a> {
    pub fn new(g: &'a mut Graph, bound: &'a BoundParams, dropout_p: f64, dropout_seed: u64) -> Self {
        Forward { g, bound, dropout_p, dropout_seed, dropout_counter: 0 }
    }

    fn p(&self, name: &str) -> NodeId {
        self.bound.id(name)
    }

    pub(crate) fn apply_dropout(&mut self, x: NodeId) -> Result<NodeId, ModelError> {
        self.dropout_counter += 1;
        Ok(self.g.dropout(
            x,
            self.dropout_p,
            self.dropout_seed ^ self.dropout_counter.wrapping_mul(0x9e3779b97f4a7c15),
        )?)
    }

    pub(crate) fn layer_norm_by(&mut self, prefix: &str, x: NodeId) -> Result<NodeId, ModelError> {
        let gamma = self.p(&format!("{prefix}.g"));
        let beta = self.p(&format!("{prefix}.b"));
        Ok(self.g.layer_norm(x, gamma, beta, 1e-5)?)
    }

    /// Multi-head attention with per-head projection matrices; `mask` is
    /// added to the raw scores.
    pub(crate) fn attention_by(
        &mut self,
        prefix: &str,
        heads: usize,
        head_dim: usize,
        queries: NodeId,
        keys_values: NodeId,
        mask: Option<NodeId>,
    ) -> Result<NodeId, ModelError> {
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let wq = self.p(&format!("{prefix}.h{h}.wq"));
            let wk = self.p(&format!("{prefix}.h{h}.wk"));
            let wv = self.p(&format!("{prefix}.h{h}.wv"));
            let q = self.g.matmul(queries, wq)?;
            let k = self.g.matmul(keys_values, wk)?;
            let v = self.g.matmul(keys_values, wv)?;
            let kt = self.g.transpose(k)?;
            let mut scores = self.g.matmul(q, kt)?;
            scores = self.g.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
            if let Some(m) = mask {
                scores = self.g.add(scores, m)?;
            }
            let attn = self.g.softmax(scores, 1)?;
            outs.push(self.g.matmul(attn, v)?);
        }
        let cat = self.g.concat(&outs, 1)?;
        let wo = self.p(&format!("{prefix}.wo"));
        Ok(self.g.matmul(cat, wo)?)
    }

    pub(crate) fn ffn_by(&mut self, prefix: &str, x: NodeId) -> Result<NodeId, ModelError> {
        let w1 = self.p(&format!("{prefix}.w1"));
        let b1 = self.p(&format!("{prefix}.b1"));
        let w2 = self.p(&format!("{prefix}.w2"));
        let b2 = self.p(&format!("{prefix}.b2"));
        let h = self.g.matmul(x, w1)?;
        let h = self.g.add(h, b1)?;
        let h = self.g.gelu(h)?;
        let out = self.g.matmul(h, w2)?;
        Ok(self.g.add(out, b2)?)
    }

    /// Token embeddings scaled by sqrt(d) plus sinusoidal positions.
    fn embed(&mut self, ids: &[usize], d: usize) -> Result<NodeId, ModelError> {
        let table = self.p("embed");
        let emb = self.g.embedding_gather(table, ids)?;
        let emb = self.g.scale(emb, (d as f64).sqrt())?;
        let pos = self.g.constant(positional_encoding(ids.len(), d));
        let sum = self.g.add(emb, pos)?;
        self.apply_dropout(sum)
    }
}

/// The translation model: parameters plus architecture.
#[derive(Debug, Clone)]
pub struct NmtModel {
    pub cfg: NmtConfig,
    pub params: ParamSet,
    pub step: u64,
}

impl NmtModel {
    pub fn new(cfg: NmtConfig, seed: u64) -> Result<NmtModel, ModelError> {
        cfg.validate()?;
        let mut p = ParamSet::new();
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let hd = cfg.head_dim();
        let seed = seed ^ label("nmt");
        let mat = |p: &mut ParamSet, name: String, shape: Vec<usize>| {
            let t = init_tensor(seed, &name, shape, Init::Xavier);
            p.insert(name, t);
        };
        let ln = |p: &mut ParamSet, prefix: String| {
            p.insert(format!("{prefix}.g"), init_tensor(seed, &prefix, vec![d], Init::Ones));
            p.insert(format!("{prefix}.b"), init_tensor(seed, &prefix, vec![d], Init::Zeros));
        };
        let attn = |p: &mut ParamSet, prefix: String| {
            for h in 0..cfg.heads {
                mat(p, format!("{prefix}.h{h}.wq"), vec![d, hd]);
                mat(p, format!("{prefix}.h{h}.wk"), vec![d, hd]);
                mat(p, format!("{prefix}.h{h}.wv"), vec![d, hd]);
            }
            mat(p, format!("{prefix}.wo"), vec![d, d]);
        };
        let ffn = |p: &mut ParamSet, prefix: String| {
            mat(p, format!("{prefix}.w1"), vec![d, f]);
            p.insert(format!("{prefix}.b1"), init_tensor(seed, &format!("{prefix}.b1"), vec![f], Init::Zeros));
            mat(p, format!("{prefix}.w2"), vec![f, d]);
            p.insert(format!("{prefix}.b2"), init_tensor(seed, &format!("{prefix}.b2"), vec![d], Init::Zeros));
        };

        p.insert("embed", init_tensor(seed, "embed", vec![v, d], Init::Embedding));
        for l in 0..cfg.layers {
            attn(&mut p, format!("enc.{l}.attn"));
            ln(&mut p, format!("enc.{l}.ln1"));
            ffn(&mut p, format!("enc.{l}.ff"));
            ln(&mut p, format!("enc.{l}.ln2"));
        }
        ln(&mut p, "enc.norm".to_string());
        for l in 0..cfg.layers {
            attn(&mut p, format!("dec.{l}.self"));
            ln(&mut p, format!("dec.{l}.ln1"));
            attn(&mut p, format!("dec.{l}.cross"));
            ln(&mut p, format!("dec.{l}.ln2"));
            ffn(&mut p, format!("dec.{l}.ff"));
            ln(&mut p, format!("dec.{l}.ln3"));
        }
        ln(&mut p, "dec.norm".to_string());
        // zero-init output projection: logits start exactly uniform
        p.insert("out.w", init_tensor(seed, "out.w", vec![d, v], Init::Zeros));
        p.insert("out.b", init_tensor(seed, "out.b", vec![v], Init::Zeros));

        Ok(NmtModel { cfg, params: p, step: 0 })
    }

    fn check_ids(&self, seq: &TokenSeq) -> Result<(), ModelError> {
        if let Some(&bad) = seq.ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id: bad, vocab: self.cfg.vocab_size });
        }
        Ok(())
    }

    /// Encoder input: source tokens followed by EOS.
    pub(crate) fn encoder_ids(&self, src: &TokenSeq) -> Vec<usize> {
        src.ids.iter().map(|&i| i as usize).chain([EOS as usize]).collect()
    }

    /// Run the encoder; returns the memory node `[src_len + 1, d]`.
    pub(crate) fn encode(
        &self,
        fwd: &mut Forward,
        src_ids: &[usize],
    ) -> Result<NodeId, ModelError> {
        let cfg = &self.cfg;
        let mut x = fwd.embed(src_ids, cfg.d_model)?;
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

    /// Decoder body plus output projection for the final position only:
    /// `[1, vocab]` logits. The causal mask makes earlier rows irrelevant to
    /// the last row after the body, so only the projection is sliced.
    pub(crate) fn decode_last_logits(
        &self,
        fwd: &mut Forward,
        memory: NodeId,
        tgt_in_ids: &[usize],
    ) -> Result<NodeId, ModelError> {
        let body = self.decode_body(fwd, memory, tgt_in_ids)?;
        let last = fwd.g.slice(body, 0, tgt_in_ids.len() - 1, 1)?;
        let logits = fwd.g.matmul(last, fwd.p("out.w"))?;
        Ok(fwd.g.add(logits, fwd.p("out.b"))?)
    }

    /// Run the decoder over `tgt_in_ids` (BOS-prefixed) against `memory`;
    /// returns logits `[tgt_len, vocab]`.
    pub(crate) fn decode_logits(
        &self,
        fwd: &mut Forward,
        memory: NodeId,
        tgt_in_ids: &[usize],
    ) -> Result<NodeId, ModelError> {
        let body = self.decode_body(fwd, memory, tgt_in_ids)?;
        let logits = fwd.g.matmul(body, fwd.p("out.w"))?;
        Ok(fwd.g.add(logits, fwd.p("out.b"))?)
    }

    /// The decoder stack up to (and including) the final layer norm.
    fn decode_body(
        &self,
        fwd: &mut Forward,
        memory: NodeId,
        tgt_in_ids: &[usize],
    ) -> Result<NodeId, ModelError> {
        let cfg = &self.cfg;
        let n = tgt_in_ids.len();
        let mask = fwd.g.constant(causal_mask(n));
        let mut x = fwd.embed(tgt_in_ids, cfg.d_model)?;
        for l in 0..cfg.layers {
            let normed = fwd.layer_norm_by(&format!("dec.{l}.ln1"), x)?;
            let a = fwd.attention_by(
                &format!("dec.{l}.self"),
                cfg.heads,
                cfg.head_dim(),
                normed,
                normed,
                Some(mask),
            )?;
            let a = fwd.apply_dropout(a)?;
            x = fwd.g.add(x, a)?;
            let normed = fwd.layer_norm_by(&format!("dec.{l}.ln2"), x)?;
            let a = fwd.attention_by(
                &format!("dec.{l}.cross"),
                cfg.heads,
                cfg.head_dim(),
                normed,
                memory,
                None,
            )?;
            let a = fwd.apply_dropout(a)?;
            x = fwd.g.add(x, a)?;
            let normed = fwd.layer_norm_by(&format!("dec.{l}.ln3"), x)?;
            let f = fwd.ffn_by(&format!("dec.{l}.ff"), normed)?;
            let f = fwd.apply_dropout(f)?;
            x = fwd.g.add(x, f)?;
        }
        fwd.layer_norm_by("dec.norm", x)
    }

    /// Teacher-forced per-position log-probabilities of
    /// `tgt tokens + EOS` given `src`, as a graph node (differentiable).
    pub(crate) fn score_nodes(
        &self,
        fwd: &mut Forward,
        src: &TokenSeq,
        tgt: &TokenSeq,
    ) -> Result<NodeId, ModelError> {
        self.check_ids(src)?;
        let src_ids = self.encoder_ids(src);
        let memory = self.encode(fwd, &src_ids)?;
        self.score_nodes_with_memory(fwd, memory, tgt)
    }

    /// As [`NmtModel::score_nodes`] against an already-encoded source.
    pub(crate) fn score_nodes_with_memory(
        &self,
        fwd: &mut Forward,
        memory: NodeId,
        tgt: &TokenSeq,
    ) -> Result<NodeId, ModelError> {
        if tgt.is_empty() {
            return Err(ModelError::EmptySequence("target"));
        }
        self.check_ids(tgt)?;
        let mut tgt_in: Vec<usize> = vec![BOS as usize];
        tgt_in.extend(tgt.ids.iter().map(|&i| i as usize));
        let mut targets: Vec<usize> = tgt.ids.iter().map(|&i| i as usize).collect();
        targets.push(EOS as usize);
        let logits = self.decode_logits(fwd, memory, &tgt_in)?;
        let lsm = fwd.g.log_softmax(logits, 1)?;
        let coords: Vec<(usize, usize)> = targets.iter().enumerate().map(|(i, &y)| (i, y)).collect();
        Ok(fwd.g.pick(lsm, &coords)?)
    }

    /// Teacher-forced log-probabilities (inference mode): one value per
    /// target token plus the terminal EOS step.
    pub fn score_sequence(&self, src: &TokenSeq, tgt: &TokenSeq) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let mut fwd = Forward::new(&mut g, &bound, self.cfg.dropout, 0);
        let node = self.score_nodes(&mut fwd, src, tgt)?;
        Ok(g.value(node).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Vocab;

    fn tiny_cfg(vocab: usize) -> NmtConfig {
        NmtConfig { vocab_size: vocab, layers: 1, heads: 2, d_model: 8, d_ff: 16, dropout: 0.0, max_len: 16 }
    }

    fn vocab() -> Vocab {
        Vocab::build(&["a b c d e ?".to_string()], 1).unwrap()
    }

    #[test]
    fn score_sequence_is_negative_and_near_uniform_at_init() {
        let v = vocab();
        let model = NmtModel::new(tiny_cfg(v.len()), 3).unwrap();
        let src = v.tokenize("a b c");
        let tgt = v.tokenize("d e");
        let scores = model.score_sequence(&src, &tgt).unwrap();
        assert_eq!(scores.len(), tgt.len() + 1); // includes EOS
        let uniform = -(v.len() as f64).ln();
        for s in &scores {
            assert!(*s <= 0.0);
            // small random weights keep logits near uniform
            assert!((s - uniform).abs() < 1.5, "score {s} vs uniform {uniform}");
        }
    }

    #[test]
    fn empty_target_is_an_error() {
        let v = vocab();
        let model = NmtModel::new(tiny_cfg(v.len()), 3).unwrap();
        let src = v.tokenize("a b");
        let empty = v.tokenize("");
        assert!(matches!(
            model.score_sequence(&src, &empty),
            Err(ModelError::EmptySequence("target"))
        ));
    }

    #[test]
    fn out_of_vocab_id_is_an_error() {
        let v = vocab();
        let model = NmtModel::new(tiny_cfg(v.len()), 3).unwrap();
        let src = v.tokenize("a b");
        let mut tgt = v.tokenize("c");
        tgt.ids[0] = 9999;
        assert!(matches!(
            model.score_sequence(&src, &tgt),
            Err(ModelError::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn decoder_distributions_sum_to_one() {
        let v = vocab();
        let model = NmtModel::new(tiny_cfg(v.len()), 5).unwrap();
        let src = v.tokenize("a b c");
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let mut fwd = Forward::new(&mut g, &bound, 0.0, 0);
        let src_ids = model.encoder_ids(&src);
        let memory = model.encode(&mut fwd, &src_ids).unwrap();
        let logits = model.decode_logits(&mut fwd, memory, &[BOS as usize, 5, 6]).unwrap();
        let probs = g.softmax(logits, 1).unwrap();
        for row in g.value(probs).data().chunks(v.len()) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
        }
    }

    #[test]
    fn gradients_pass_grad_check_on_two_sentence_batch() {
        // reduced architecture keeps finite differences fast; the forward
        // code path is identical to the full model
        let v = vocab();
        let cfg = NmtConfig { vocab_size: v.len(), layers: 1, heads: 2, d_model: 4, d_ff: 8, dropout: 0.0, max_len: 16 };
        let model = NmtModel::new(cfg, 7).unwrap();
        let batch = [
            (v.tokenize("a b"), v.tokenize("c")),
            (v.tokenize("c d e"), v.tokenize("a b")),
        ];
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        let tensors: Vec<Tensor> = model.params.tensors().cloned().collect();
        let err = crate::tensor::grad_check(
            |g, ids| {
                let bound = BoundParams::from_ids(names.iter().cloned(), ids.to_vec());
                let mut fwd = Forward::new(g, &bound, 0.0, 0);
                let mut total: Option<crate::tensor::NodeId> = None;
                for (src, tgt) in &batch {
                    let scores = model.score_nodes(&mut fwd, src, tgt).map_err(|e| match e {
                        ModelError::Tensor(t) => t,
                        other => panic!("unexpected error {other}"),
                    })?;
                    let s = fwd.g.sum(scores)?;
                    total = Some(match total {
                        Some(t) => fwd.g.add(t, s)?,
                        None => s,
                    });
                }
                Ok(total.unwrap())
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }
}
