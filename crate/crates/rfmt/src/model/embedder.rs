//! Bilingual token embedders for adequacy scoring. The oracle variant gives
//! one unit basis vector per bilingual lemma (a word, its inflections, and
//! its translation share a vector); the trained variant takes unit-normalized
//! final-layer states of a bilingual masked LM.

use std::collections::BTreeMap;

use super::mlm::MaskedLm;
use super::transformer::Forward;
use super::ModelError;
use crate::corpus::Dictionary;
use crate::tensor::Graph;
use crate::text::TokenSeq;

pub enum Embedder {
    Oracle(OracleEmbedder),
    Trained(TrainedEmbedder),
}

impl Embedder {
    /// One unit vector per token; unknown tokens get the UNK vector.
    pub fn embed_tokens(&self, tokens: &TokenSeq) -> Result<Vec<Vec<f64>>, ModelError> {
        match self {
            Embedder::Oracle(o) => Ok(o.embed_tokens(tokens)),
            Embedder::Trained(t) => t.embed_tokens(tokens),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Embedder::Oracle(_) => "oracle",
            Embedder::Trained(_) => "trained",
        }
    }
}

/// Dictionary-derived embedder: one basis vector per lemma, so cosine
/// similarity is exactly lemma identity.
pub struct OracleEmbedder {
    token_index: BTreeMap<String, usize>,
    dim: usize,
}

impl OracleEmbedder {
    pub fn from_dictionary(dict: &Dictionary) -> OracleEmbedder {
        let mut lemmas: Vec<&str> = dict.lemma_entries().map(|(_, l)| l).collect();
        lemmas.sort_unstable();
        lemmas.dedup();
        let lemma_index: BTreeMap<&str, usize> =
            lemmas.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        // every known token (either language) points at its lemma's slot;
        // the last slot is the shared UNK direction
        let token_index = dict
            .lemma_entries()
            .map(|(tok, lemma)| (tok.to_string(), lemma_index[lemma]))
            .collect();
        OracleEmbedder { token_index, dim: lemmas.len() + 1 }
    }

    /// Tokens are looked up by surface form through the lemma table.
    pub fn embed_tokens(&self, tokens: &TokenSeq) -> Vec<Vec<f64>> {
        tokens
            .tokens
            .iter()
            .map(|tok| {
                let idx = self.token_index.get(tok.as_str()).copied().unwrap_or(self.dim - 1);
                let mut v = vec![0.0; self.dim];
                v[idx] = 1.0;
                v
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Final-layer states of a bilingual masked LM, unit-normalized.
pub struct TrainedEmbedder {
    pub mlm: MaskedLm,
}

impl TrainedEmbedder {
    pub fn new(mlm: MaskedLm) -> TrainedEmbedder {
        TrainedEmbedder { mlm }
    }

    pub fn embed_tokens(&self, tokens: &TokenSeq) -> Result<Vec<Vec<f64>>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence("embedder input"));
        }
        let wrapped = self.mlm.wrap_ids(&tokens.ids);
        let mut g = Graph::new();
        let bound = self.mlm.params.bind(&mut g);
        let mut fwd = Forward::new(&mut g, &bound, self.mlm.cfg.dropout, 0);
        let hidden = self.mlm.hidden(&mut fwd, &wrapped)?;
        let d = self.mlm.cfg.d_model;
        let data = g.value(hidden).data();
        // rows 1..=len are the real tokens (BOS/EOS stripped)
        Ok((1..=tokens.len())
            .map(|r| {
                let row = &data[r * d..(r + 1) * d];
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.iter().map(|x| x / norm).collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Task, TaskSpec};
    use crate::model::MlmConfig;
    use crate::text::Vocab;

    fn task() -> Task {
        Task::new(TaskSpec::default()).unwrap()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn oracle_pairs_share_a_vector() {
        let t = task();
        let emb = OracleEmbedder::from_dictionary(t.dictionary());
        let v = Vocab::build(&["does seoda works work skrowa".to_string()], 1).unwrap();
        let seq = v.tokenize("does seoda works work skrowa");
        let vecs = emb.embed_tokens(&seq);
        // does <-> its translation seoda
        assert_eq!(dot(&vecs[0], &vecs[1]), 1.0);
        // works and work share the lemma, and so does skrowa = t(works)
        assert_eq!(dot(&vecs[2], &vecs[3]), 1.0);
        assert_eq!(dot(&vecs[2], &vecs[4]), 1.0);
        // unrelated words are orthogonal
        assert_eq!(dot(&vecs[0], &vecs[2]), 0.0);
        for v in &vecs {
            assert!((norm(v) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn oracle_unknown_tokens_share_the_unk_vector() {
        let t = task();
        let emb = OracleEmbedder::from_dictionary(t.dictionary());
        let v = Vocab::build(&["a".to_string()], 1).unwrap();
        let seq = v.tokenize("zzz qqq");
        let vecs = emb.embed_tokens(&seq);
        assert_eq!(dot(&vecs[0], &vecs[1]), 1.0);
    }

    #[test]
    fn trained_embedder_is_unit_norm_and_deterministic() {
        let v = Vocab::build(&["a b c d ?".to_string()], 1).unwrap();
        let cfg = MlmConfig { vocab_size: v.len(), layers: 1, heads: 2, d_model: 8, d_ff: 16, dropout: 0.2, max_len: 16 };
        let emb = TrainedEmbedder::new(MaskedLm::new(cfg, 3).unwrap());
        let seq = v.tokenize("a b c");
        let v1 = emb.embed_tokens(&seq).unwrap();
        let v2 = emb.embed_tokens(&seq).unwrap();
        assert_eq!(v1, v2); // dropout off at inference
        assert_eq!(v1.len(), 3);
        for vec in &v1 {
            assert!((norm(vec) - 1.0).abs() < 1e-6);
        }
        // contextual: same token in different contexts embeds differently
        let other = v.tokenize("a d c");
        let v3 = emb.embed_tokens(&other).unwrap();
        assert_ne!(v1[0], v3[0]);
    }
}
