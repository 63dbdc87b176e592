//! Word-level tokenization, vocabulary management, and the question-mark
//! normalization rule applied to sources and candidates before scoring.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const MASK: u32 = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<mask>"];

const VOCAB_HEADER: &str = "rfmt-vocab 1";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("bad vocab file: {0}")]
    BadVocabFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Token ids plus the surface form of each token. Ids and surfaces are always
/// the same length; out-of-vocabulary words keep their surface next to the
/// UNK id.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Canonical whitespace form: tokens joined by single spaces.
    pub fn surface(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Token/id mapping with fixed reserved ids and a guaranteed "?" entry.
#[derive(Debug, Clone)]
pub struct Vocab {
    id_of: HashMap<String, u32>,
    token_of: Vec<String>, // indexed by id, includes reserved
}

impl Vocab {
    /// Build a vocabulary from corpus lines: tokens with frequency >=
    /// `min_count` are kept, ordered by frequency (descending) then
    /// lexicographically. "?" is always included.
    pub fn build(corpus: &[String], min_count: usize) -> Result<Vocab, TextError> {
        if corpus.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in corpus {
            for tok in split_words(line) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        counts.entry("?".to_string()).or_insert(usize::MAX); // always present
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        kept.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

        let mut token_of: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        token_of.extend(kept.into_iter().map(|(t, _)| t));
        Ok(Vocab::from_tokens(token_of))
    }

    fn from_tokens(token_of: Vec<String>) -> Vocab {
        let id_of = token_of.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { id_of, token_of }
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.id_of.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        self.token_of.get(id as usize).map(|s| s.as_str()).unwrap_or(RESERVED[UNK as usize])
    }

    pub fn question_mark_id(&self) -> u32 {
        self.id("?")
    }

    /// Whitespace word split with terminal punctuation split off, then map
    /// each token to its id (UNK for out-of-vocabulary, surface preserved).
    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let tokens = split_words(text);
        let ids = tokens.iter().map(|t| self.id(t)).collect();
        TokenSeq { ids, tokens }
    }

    /// Join the stored surface forms with single spaces.
    pub fn detokenize(&self, seq: &TokenSeq) -> String {
        seq.surface()
    }

    /// Build a TokenSeq from raw ids (e.g. decoder output); surfaces come
    /// from the vocabulary.
    pub fn seq_from_ids(&self, ids: &[u32]) -> TokenSeq {
        TokenSeq {
            ids: ids.to_vec(),
            tokens: ids.iter().map(|&i| self.token(i).to_string()).collect(),
        }
    }

    /// Serialize as plain text: a header line, then one non-reserved token
    /// per line in id order (line number = id - reserved offset).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{VOCAB_HEADER}");
        for tok in &self.token_of[RESERVED.len()..] {
            let _ = writeln!(out, "{tok}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocab, TextError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == VOCAB_HEADER => {}
            Some(h) => {
                return Err(TextError::BadVocabFile(format!(
                    "unsupported header {h:?}, expected {VOCAB_HEADER:?}"
                )))
            }
            None => return Err(TextError::BadVocabFile("empty file".into())),
        }
        let mut token_of: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        token_of.extend(lines.map(|l| l.to_string()));
        let vocab = Vocab::from_tokens(token_of);
        if !vocab.contains("?") {
            return Err(TextError::BadVocabFile("missing \"?\" token".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        crate::util::write_atomic(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, TextError> {
        Vocab::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Whitespace split with terminal punctuation (".", "?", "!") peeled off each
/// word as separate tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let trailing: Vec<char> = word
            .chars()
            .rev()
            .take_while(|c| matches!(c, '.' | '?' | '!'))
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let head_len = word.len() - trailing.iter().map(|c| c.len_utf8()).sum::<usize>();
        if head_len > 0 {
            out.push(word[..head_len].to_string());
        }
        for c in trailing {
            out.push(c.to_string());
        }
    }
    out
}

/// Canonical whitespace form of a string under this crate's tokenizer.
pub fn canonicalize(text: &str) -> String {
    split_words(text).join(" ")
}

/// Strip trailing full stops (and whitespace) and make sure the string ends
/// with a question mark; the appended "?" is a separate token. Idempotent;
/// the empty string becomes "?".
pub fn normalize_question(text: &str) -> String {
    let stripped = text.trim_end_matches(|c: char| c == '.' || c.is_whitespace());
    if stripped.is_empty() {
        return "?".to_string();
    }
    if stripped.ends_with('?') {
        stripped.to_string()
    } else {
        format!("{stripped} ?")
    }
}
