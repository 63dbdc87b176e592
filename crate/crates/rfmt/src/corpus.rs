//! The deterministic synthetic bilingual noisy-question task.
//!
//! Clean sources are English-like questions built from a closed template set
//! and an entity lexicon. The gold translation oracle maps each lexical word
//! through a fixed injective dictionary (reverse the word, append "a"),
//! permutes word order by a template-specific rule, and appends the
//! interrogative particle "ka" before the final "?" of every question, so the
//! two languages share no lexical surface tokens. Noisy sources are derived
//! from clean sources by three recorded phenomena: declarative rephrasing,
//! question-mark loss, and a single character-level typo.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::KeyboardMap;
use crate::text::split_words;
use crate::util::{derive_rng, label};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("sentence is not a clean template instantiation: {0:?}")]
    NotATemplateSentence(String),
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    InvalidRatios(Vec<f64>),
    #[error("bad corpus file at line {line}: {detail}")]
    BadCorpusFile { line: usize, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-phenomenon probabilities applied independently to each generated line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NoiseProfile {
    /// Probability that the terminal "?" is lost (replaced by "." or dropped).
    pub drop_qmark: f64,
    /// Probability that the question is rephrased in statement word order.
    pub declarative: f64,
    /// Probability that one content token receives a character-level typo.
    pub typo: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile { drop_qmark: 0.55, declarative: 0.45, typo: 0.3 }
    }
}

fn default_entities() -> Vec<String> {
    [
        "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india",
        "juliet", "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo",
        "sierra", "tango", "uniform", "victor", "whiskey", "xray", "yankee", "zulu", "samsung",
        "a50s", "xylo", "pixel", "ipad", "kindle", "thermos", "blender", "tripod", "router",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn default_pretrain_size() -> usize {
    5200
}
fn default_adapt_size() -> usize {
    2750
}
fn default_mono_size() -> usize {
    4000
}
fn default_pretrain_qf() -> f64 {
    0.03
}
fn default_mono_qf() -> f64 {
    0.3
}
fn default_pretrain_vf() -> f64 {
    // 200 of the default 5200 lines
    200.0 / 5200.0
}
fn default_adapt_vf() -> f64 {
    // 250 of the default 2750 lines
    250.0 / 2750.0
}
fn default_adapt_tf() -> f64 {
    // 500 of the default 2750 lines
    500.0 / 2750.0
}

/// Everything needed to regenerate the synthetic task byte-for-byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(default = "default_entities")]
    pub entities: Vec<String>,
    #[serde(default)]
    pub noise: NoiseProfile,
    /// Clean general-domain parallel lines (mostly statements).
    #[serde(default = "default_pretrain_size")]
    pub pretrain_size: usize,
    /// In-domain noisy question triples (split into train/valid/test).
    #[serde(default = "default_adapt_size")]
    pub adapt_size: usize,
    /// Monolingual lines per language for LM/embedder training.
    #[serde(default = "default_mono_size")]
    pub mono_size: usize,
    /// Fraction of questions in the pretraining corpus.
    #[serde(default = "default_pretrain_qf")]
    pub pretrain_question_fraction: f64,
    /// Fraction of questions in the monolingual corpora.
    #[serde(default = "default_mono_qf")]
    pub mono_question_fraction: f64,
    /// Validation share of the pretraining corpus.
    #[serde(default = "default_pretrain_vf")]
    pub pretrain_valid_fraction: f64,
    /// Validation and test shares of the in-domain corpus (the rest trains).
    #[serde(default = "default_adapt_vf")]
    pub adapt_valid_fraction: f64,
    #[serde(default = "default_adapt_tf")]
    pub adapt_test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// How the terminal question mark was lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QmarkEdit {
    ReplacedByDot,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypoEdit {
    pub token_index: usize,
    pub original: String,
}

/// Record of exactly which phenomena produced `noisy_src` from `clean_src`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditLog {
    pub template: usize,
    pub declarative: bool,
    pub qmark: Option<QmarkEdit>,
    pub typo: Option<TypoEdit>,
}

impl EditLog {
    pub fn clean(template: usize) -> Self {
        EditLog { template, declarative: false, qmark: None, typo: None }
    }
}

/// One record of the synthetic task. Training consumes only `noisy_src`;
/// `tgt` is the gold translation of `clean_src` and is reserved for
/// evaluation and data ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTriple {
    pub clean_src: String,
    pub noisy_src: String,
    pub tgt: String,
    pub edit_log: EditLog,
}

// ── templates ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pat {
    W(&'static str),
    /// Slot index 0 or 1; instantiated with an entity.
    Slot(usize),
}

pub struct Template {
    pub name: &'static str,
    pub question: &'static [Pat],
    pub statement: &'static [Pat],
    /// Target word order: indices into the question pattern.
    pub q_perm: &'static [usize],
    /// Target word order: indices into the statement pattern.
    pub s_perm: &'static [usize],
}

use Pat::{Slot, W};

pub static TEMPLATES: &[Template] = &[
    Template {
        name: "work-with",
        question: &[W("does"), W("it"), W("work"), W("with"), Slot(0)],
        statement: &[W("it"), W("works"), W("with"), Slot(0)],
        q_perm: &[4, 3, 2, 1, 0],
        s_perm: &[3, 2, 1, 0],
    },
    Template {
        name: "work-in",
        question: &[W("does"), W("it"), W("work"), W("in"), Slot(0)],
        statement: &[W("it"), W("works"), W("in"), Slot(0)],
        q_perm: &[4, 3, 2, 1, 0],
        s_perm: &[3, 2, 1, 0],
    },
    Template {
        name: "fit-in",
        question: &[W("will"), W("it"), W("fit"), W("in"), Slot(0)],
        statement: &[W("it"), W("will"), W("fit"), W("in"), Slot(0)],
        q_perm: &[4, 3, 2, 1, 0],
        s_perm: &[4, 3, 2, 1, 0],
    },
    Template {
        name: "support",
        question: &[W("does"), W("it"), W("support"), Slot(0)],
        statement: &[W("it"), W("supports"), Slot(0)],
        q_perm: &[3, 2, 1, 0],
        s_perm: &[2, 1, 0],
    },
    Template {
        name: "compatible",
        question: &[W("is"), W("it"), W("compatible"), W("with"), Slot(0)],
        statement: &[W("it"), W("is"), W("compatible"), W("with"), Slot(0)],
        q_perm: &[4, 3, 2, 1, 0],
        s_perm: &[4, 3, 2, 1, 0],
    },
    Template {
        name: "use-with",
        question: &[W("can"), W("i"), W("use"), W("it"), W("with"), Slot(0)],
        statement: &[W("i"), W("can"), W("use"), W("it"), W("with"), Slot(0)],
        q_perm: &[5, 4, 3, 2, 1, 0],
        s_perm: &[5, 4, 3, 2, 1, 0],
    },
    Template {
        name: "last",
        question: &[W("how"), W("long"), W("does"), W("the"), Slot(0), W("last")],
        statement: &[W("the"), Slot(0), W("lasts"), W("long")],
        q_perm: &[5, 4, 3, 2, 1, 0],
        s_perm: &[3, 2, 1, 0],
    },
    // wh-templates keep source word order in the target (a different,
    // template-specific rule from the reversing templates above)
    Template {
        name: "difference-two",
        question: &[W("what"), W("is"), W("the"), W("difference"), W("between"), W("the"), W("two")],
        statement: &[W("the"), W("difference"), W("between"), W("the"), W("two")],
        q_perm: &[0, 1, 2, 3, 4, 5, 6],
        s_perm: &[0, 1, 2, 3, 4],
    },
    Template {
        name: "difference-xy",
        question: &[W("what"), W("is"), W("the"), W("difference"), W("between"), Slot(0), W("and"), Slot(1)],
        statement: &[W("the"), W("difference"), W("between"), Slot(0), W("and"), Slot(1)],
        q_perm: &[0, 1, 2, 3, 4, 5, 6, 7],
        s_perm: &[0, 1, 2, 3, 4, 5],
    },
    Template {
        name: "waterproof",
        question: &[W("is"), W("the"), Slot(0), W("waterproof")],
        statement: &[W("the"), Slot(0), W("is"), W("waterproof")],
        q_perm: &[3, 2, 1, 0],
        s_perm: &[3, 2, 1, 0],
    },
];

/// Interrogative particle appended before the final "?" of every target
/// question.
pub const PARTICLE: &str = "ka";

/// Inflection pairs sharing one lemma, used by the bilingual dictionary.
static LEMMA_PAIRS: &[(&str, &str)] = &[("works", "work"), ("supports", "support"), ("lasts", "last")];

fn slot_count(pattern: &[Pat]) -> usize {
    pattern.iter().filter(|p| matches!(p, Slot(_))).count().min(2)
}

/// Fixed injective word mapping into the synthetic target language.
pub fn target_form(word: &str) -> String {
    let mut s: String = word.chars().rev().collect();
    s.push('a');
    s
}

/// The published bilingual dictionary: source word -> target form, plus the
/// lemma key shared by a word, its inflections, and its translation.
#[derive(Debug, Clone)]
pub struct Dictionary {
    fwd: BTreeMap<String, String>,
    lemma: BTreeMap<String, String>,
}

impl Dictionary {
    fn build(entities: &[String]) -> Dictionary {
        let mut words: BTreeSet<String> = entities.iter().cloned().collect();
        for t in TEMPLATES {
            for p in t.question.iter().chain(t.statement.iter()) {
                if let W(w) = p {
                    words.insert(w.to_string());
                }
            }
        }
        let base_lemma = |w: &str| -> String {
            LEMMA_PAIRS
                .iter()
                .find(|(infl, _)| *infl == w)
                .map(|(_, base)| base.to_string())
                .unwrap_or_else(|| w.to_string())
        };
        let mut fwd = BTreeMap::new();
        let mut lemma = BTreeMap::new();
        for w in &words {
            let t = target_form(w);
            let l = base_lemma(w);
            fwd.insert(w.clone(), t.clone());
            lemma.insert(w.clone(), l.clone());
            lemma.insert(t, l);
        }
        for special in ["?", ".", "!", PARTICLE] {
            lemma.insert(special.to_string(), special.to_string());
        }
        Dictionary { fwd, lemma }
    }

    pub fn translate_word(&self, word: &str) -> Option<&str> {
        self.fwd.get(word).map(|s| s.as_str())
    }

    /// Lemma key shared by a word and its translation; None for tokens
    /// outside the task vocabulary.
    pub fn lemma_of(&self, token: &str) -> Option<&str> {
        self.lemma.get(token).map(|s| s.as_str())
    }

    pub fn source_words(&self) -> impl Iterator<Item = &str> {
        self.fwd.keys().map(|s| s.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.fwd.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Every known token (both languages and specials) with its lemma key.
    pub fn lemma_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.lemma.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

// ── pattern matching ─────────────────────────────────────────────────

/// Match `tokens` against `pattern`, requiring slot tokens to satisfy
/// `slot_ok`. Returns the captured slot values on success.
fn match_pattern(
    tokens: &[&str],
    pattern: &[Pat],
    slot_ok: &dyn Fn(&str) -> bool,
) -> Option<Vec<String>> {
    if tokens.len() != pattern.len() {
        return None;
    }
    let mut slots: Vec<Option<String>> = vec![None, None];
    for (tok, pat) in tokens.iter().zip(pattern) {
        match pat {
            W(w) => {
                if !tok.eq_ignore_ascii_case(w) {
                    return None;
                }
            }
            Slot(i) => {
                if !slot_ok(tok) {
                    return None;
                }
                slots[*i] = Some(tok.to_string());
            }
        }
    }
    Some(slots.into_iter().flatten().collect::<Vec<String>>())
        .filter(|s| s.len() == slot_count(pattern))
}

fn instantiate(pattern: &[Pat], slots: &[String]) -> Vec<String> {
    pattern
        .iter()
        .map(|p| match p {
            W(w) => w.to_string(),
            Slot(i) => slots[*i].clone(),
        })
        .collect()
}

// ── the compiled task ────────────────────────────────────────────────

/// A validated [`TaskSpec`] plus its dictionary; all generation goes through
/// this.
pub struct Task {
    pub spec: TaskSpec,
    dict: Dictionary,
    keyboard: KeyboardMap,
}

/// Monolingual corpora for LM and embedder training.
pub struct MonoCorpus {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

impl MonoCorpus {
    /// Source and target lines interleaved, for bilingual training.
    pub fn mixed(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.src.len() + self.tgt.len());
        for i in 0..self.src.len().max(self.tgt.len()) {
            if let Some(s) = self.src.get(i) {
                out.push(s.clone());
            }
            if let Some(t) = self.tgt.get(i) {
                out.push(t.clone());
            }
        }
        out
    }
}

impl Task {
    pub fn new(spec: TaskSpec) -> Result<Task, CorpusError> {
        for (name, p) in [
            ("drop_qmark", spec.noise.drop_qmark),
            ("declarative", spec.noise.declarative),
            ("typo", spec.noise.typo),
            ("pretrain_question_fraction", spec.pretrain_question_fraction),
            ("mono_question_fraction", spec.mono_question_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CorpusError::InvalidSpec(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if spec.entities.len() < 2 {
            return Err(CorpusError::InvalidSpec("need at least two entities".into()));
        }
        for e in &spec.entities {
            if e.split_whitespace().count() != 1 || e.chars().any(|c| matches!(c, '.' | '?' | '!')) {
                return Err(CorpusError::InvalidSpec(format!("entity {e:?} is not a single word")));
            }
        }
        let dict = Dictionary::build(&spec.entities);
        Ok(Task { spec, dict, keyboard: KeyboardMap::qwerty() })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn templates(&self) -> &'static [Template] {
        TEMPLATES
    }

    fn is_entity(&self, tok: &str) -> bool {
        self.spec.entities.iter().any(|e| e == tok)
    }

    /// Deterministic translation oracle for clean template sentences
    /// (questions ending in "?" or statements ending in ".").
    pub fn gold_translate(&self, clean_src: &str) -> Result<String, CorpusError> {
        let tokens = split_words(clean_src);
        let toks: Vec<&str> = tokens.iter().map(|s| s.as_str()).collect();
        if toks.len() < 2 {
            return Err(CorpusError::NotATemplateSentence(clean_src.to_string()));
        }
        let (body, mark) = toks.split_at(toks.len() - 1);
        let is_question = match mark[0] {
            "?" => true,
            "." => false,
            _ => return Err(CorpusError::NotATemplateSentence(clean_src.to_string())),
        };
        let slot_ok = |t: &str| self.is_entity(t);
        for tpl in TEMPLATES {
            let (pattern, perm) = if is_question {
                (tpl.question, tpl.q_perm)
            } else {
                (tpl.statement, tpl.s_perm)
            };
            if let Some(slots) = match_pattern(body, pattern, &slot_ok) {
                let source_words = instantiate(pattern, &slots);
                let mut out: Vec<String> = perm
                    .iter()
                    .map(|&i| {
                        self.dict
                            .translate_word(&source_words[i])
                            .map(|s| s.to_string())
                            .ok_or_else(|| {
                                CorpusError::NotATemplateSentence(clean_src.to_string())
                            })
                    })
                    .collect::<Result<_, _>>()?;
                if is_question {
                    out.push(PARTICLE.to_string());
                    out.push("?".to_string());
                } else {
                    out.push(".".to_string());
                }
                return Ok(out.join(" "));
            }
        }
        Err(CorpusError::NotATemplateSentence(clean_src.to_string()))
    }

    fn sample_slots(&self, rng: &mut ChaCha12Rng, n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let e = &self.spec.entities[rng.gen_range(0..self.spec.entities.len())];
            if !out.contains(e) {
                out.push(e.clone());
            }
        }
        out
    }

    fn sample_clean(&self, rng: &mut ChaCha12Rng, question: bool) -> (usize, Vec<String>, Vec<String>) {
        let t_idx = rng.gen_range(0..TEMPLATES.len());
        let tpl = &TEMPLATES[t_idx];
        let pattern = if question { tpl.question } else { tpl.statement };
        let slots = self.sample_slots(rng, slot_count(pattern));
        let mut tokens = instantiate(pattern, &slots);
        tokens.push(if question { "?" } else { "." }.to_string());
        (t_idx, tokens, slots)
    }

    /// Apply one visible character-level edit to a token.
    fn typo_token(&self, rng: &mut ChaCha12Rng, token: &str) -> String {
        let chars: Vec<char> = token.chars().collect();
        let kind = rng.gen_range(0..4u32);
        let pos = rng.gen_range(0..chars.len());
        let mut out = chars.clone();
        match kind {
            // keyboard-adjacent substitution
            0 => {
                if let Some(n) = self.keyboard.neighbors(chars[pos]) {
                    out[pos] = n[rng.gen_range(0..n.len())];
                    return out.into_iter().collect();
                }
            }
            // vowel drop
            1 => {
                let vowels: Vec<usize> = chars
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u'))
                    .map(|(i, _)| i)
                    .collect();
                if !vowels.is_empty() {
                    out.remove(vowels[rng.gen_range(0..vowels.len())]);
                    return out.into_iter().collect();
                }
            }
            // transpose two adjacent distinct characters
            2 => {
                let pairs: Vec<usize> =
                    (0..chars.len() - 1).filter(|&i| chars[i] != chars[i + 1]).collect();
                if !pairs.is_empty() {
                    let i = pairs[rng.gen_range(0..pairs.len())];
                    out.swap(i, i + 1);
                    return out.into_iter().collect();
                }
            }
            _ => {}
        }
        // fallback: substitute a different random letter
        let mut c = char::from(b'a' + rng.gen_range(0..26u8));
        while c == chars[pos] {
            c = char::from(b'a' + rng.gen_range(0..26u8));
        }
        out[pos] = c;
        out.into_iter().collect()
    }

    fn apply_noise(
        &self,
        rng: &mut ChaCha12Rng,
        t_idx: usize,
        question_tokens: &[String],
        slots: &[String],
    ) -> (Vec<String>, EditLog) {
        let tpl = &TEMPLATES[t_idx];
        let mut log = EditLog::clean(t_idx);
        let mut tokens: Vec<String>;

        // declarative rephrasing keeps the terminal mark
        if rng.gen::<f64>() < self.spec.noise.declarative {
            log.declarative = true;
            tokens = instantiate(tpl.statement, slots);
            tokens.push(question_tokens.last().unwrap().clone());
        } else {
            tokens = question_tokens.to_vec();
        }

        // question-mark loss
        if rng.gen::<f64>() < self.spec.noise.drop_qmark {
            let edit = if rng.gen::<f64>() < 0.5 {
                *tokens.last_mut().unwrap() = ".".to_string();
                QmarkEdit::ReplacedByDot
            } else {
                tokens.pop();
                QmarkEdit::Dropped
            };
            log.qmark = Some(edit);
        }

        // one character-level typo on a content token
        if rng.gen::<f64>() < self.spec.noise.typo {
            let eligible: Vec<usize> =
                (0..tokens.len()).filter(|&i| tokens[i].chars().count() >= 3).collect();
            if !eligible.is_empty() {
                let idx = eligible[rng.gen_range(0..eligible.len())];
                let original = tokens[idx].clone();
                tokens[idx] = self.typo_token(rng, &original);
                log.typo = Some(TypoEdit { token_index: idx, original });
            }
        }
        (tokens, log)
    }

    /// In-domain noisy question triples (deterministic given the spec seed).
    pub fn gen_adapt(&self) -> Result<Vec<CorpusTriple>, CorpusError> {
        (0..self.spec.adapt_size)
            .map(|i| {
                let mut rng = derive_rng(self.spec.seed, &[label("adapt"), i as u64]);
                let (t_idx, clean_tokens, slots) = self.sample_clean(&mut rng, true);
                let clean_src = clean_tokens.join(" ");
                let tgt = self.gold_translate(&clean_src)?;
                let (noisy_tokens, edit_log) =
                    self.apply_noise(&mut rng, t_idx, &clean_tokens, &slots);
                Ok(CorpusTriple { clean_src, noisy_src: noisy_tokens.join(" "), tgt, edit_log })
            })
            .collect()
    }

    /// Clean general-domain parallel triples (statements with a small
    /// question fraction); `noisy_src == clean_src`.
    pub fn gen_pretrain(&self) -> Result<Vec<CorpusTriple>, CorpusError> {
        (0..self.spec.pretrain_size)
            .map(|i| {
                let mut rng = derive_rng(self.spec.seed, &[label("pretrain"), i as u64]);
                let question = rng.gen::<f64>() < self.spec.pretrain_question_fraction;
                let (t_idx, tokens, _slots) = self.sample_clean(&mut rng, question);
                let clean_src = tokens.join(" ");
                let tgt = self.gold_translate(&clean_src)?;
                Ok(CorpusTriple {
                    clean_src: clean_src.clone(),
                    noisy_src: clean_src,
                    tgt,
                    edit_log: EditLog::clean(t_idx),
                })
            })
            .collect()
    }

    /// General-domain monolingual text in both languages (statement-heavy
    /// with a configurable question fraction); independent of the parallel
    /// corpora streams.
    pub fn gen_monolingual(&self) -> Result<MonoCorpus, CorpusError> {
        let mut src = Vec::with_capacity(self.spec.mono_size);
        let mut tgt = Vec::with_capacity(self.spec.mono_size);
        for i in 0..self.spec.mono_size {
            let mut rng = derive_rng(self.spec.seed, &[label("mono"), i as u64]);
            let question = rng.gen::<f64>() < self.spec.mono_question_fraction;
            let (_, tokens, _) = self.sample_clean(&mut rng, question);
            let s = tokens.join(" ");
            let t = self.gold_translate(&s)?;
            src.push(s);
            tgt.push(t);
        }
        Ok(MonoCorpus { src, tgt })
    }

    /// Undo the recorded edits of a triple; returns the reconstructed clean
    /// source. Used to verify noise provenance.
    pub fn reverse_apply_edits(&self, triple: &CorpusTriple) -> Result<String, CorpusError> {
        let mut tokens = split_words(&triple.noisy_src);
        if let Some(typo) = &triple.edit_log.typo {
            if typo.token_index >= tokens.len() {
                return Err(CorpusError::BadCorpusFile {
                    line: 0,
                    detail: format!("typo index {} out of range", typo.token_index),
                });
            }
            tokens[typo.token_index] = typo.original.clone();
        }
        match triple.edit_log.qmark {
            Some(QmarkEdit::ReplacedByDot) => {
                *tokens.last_mut().unwrap() = "?".to_string();
            }
            Some(QmarkEdit::Dropped) => tokens.push("?".to_string()),
            None => {}
        }
        if triple.edit_log.declarative {
            let tpl = &TEMPLATES[triple.edit_log.template];
            let body = &tokens[..tokens.len() - 1];
            let toks: Vec<&str> = body.iter().map(|s| s.as_str()).collect();
            let slots = match_pattern(&toks, tpl.statement, &|t| self.is_entity(t)).ok_or_else(
                || CorpusError::BadCorpusFile {
                    line: 0,
                    detail: format!("cannot re-match statement pattern for {:?}", triple.noisy_src),
                },
            )?;
            let mut q = instantiate(tpl.question, &slots);
            q.push("?".to_string());
            tokens = q;
        }
        Ok(tokens.join(" "))
    }
}

// ── splits ───────────────────────────────────────────────────────────

pub struct Splits {
    pub train: Vec<CorpusTriple>,
    pub valid: Vec<CorpusTriple>,
    pub test: Vec<CorpusTriple>,
}

/// Disjoint, exhaustive, deterministic split. The train split is sorted by
/// reference length so the training data order stays consistent across
/// systems.
pub fn split(corpus: &[CorpusTriple], ratios: [f64; 3], seed: u64) -> Result<Splits, CorpusError> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(ratios.to_vec()));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &[label("split")]);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_valid = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut train: Vec<CorpusTriple> =
        order[..n_train].iter().map(|&i| corpus[i].clone()).collect();
    let valid: Vec<CorpusTriple> =
        order[n_train..n_train + n_valid].iter().map(|&i| corpus[i].clone()).collect();
    let test: Vec<CorpusTriple> =
        order[n_train + n_valid..].iter().map(|&i| corpus[i].clone()).collect();
    train.sort_by_key(|t| split_words(&t.tgt).len());
    Ok(Splits { train, valid, test })
}

// ── file io ──────────────────────────────────────────────────────────

/// One JSON record per line with fields clean_src, noisy_src, tgt, edit_log.
pub fn write_triples(path: &Path, triples: &[CorpusTriple]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for t in triples {
        out.push_str(&serde_json::to_string(t).expect("serializable"));
        out.push('\n');
    }
    crate::util::write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn read_triples(path: &Path) -> Result<Vec<CorpusTriple>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| CorpusError::BadCorpusFile {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Plain text, one sentence per line.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    crate::util::write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    Ok(std::fs::read_to_string(path)?.lines().map(|s| s.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task(seed: u64) -> Task {
        let spec = TaskSpec { adapt_size: 400, pretrain_size: 300, mono_size: 100, seed, ..TaskSpec::default() };
        Task::new(spec).unwrap()
    }

    #[test]
    fn gold_translate_is_deterministic_and_injective() {
        let task = small_task(1);
        let a = task.gold_translate("does it work with alpha ?").unwrap();
        let b = task.gold_translate("does it work with alpha ?").unwrap();
        assert_eq!(a, b);
        let c = task.gold_translate("does it work with bravo ?").unwrap();
        assert_ne!(a, c);
    }

    // hand-derived golden translations: reverse each word and append "a",
    // apply the template's target order, then add the particle and mark
    #[test]
    fn gold_translate_golden_sentences() {
        let task = small_task(1);
        let cases = [
            ("does it work with alpha ?", "ahplaa htiwa krowa tia seoda ka ?"),
            ("will it fit in xylo ?", "olyxa nia tifa tia lliwa ka ?"),
            ("it works with alpha .", "ahplaa htiwa skrowa tia ."),
            ("what is the difference between kilo and lima ?", "tahwa sia ehta ecnereffida neewteba olika dnaa amila ka ?"),
            ("is the router waterproof ?", "foorpretawa retuora ehta sia ka ?"),
        ];
        for (src, expect) in cases {
            assert_eq!(task.gold_translate(src).unwrap(), expect, "source {src:?}");
        }
    }

    #[test]
    fn gold_translate_rejects_non_template_sentences() {
        let task = small_task(1);
        assert!(task.gold_translate("does it work with zzz ?").is_err());
        assert!(task.gold_translate("hello world .").is_err());
        assert!(task.gold_translate("does it work with alpha").is_err());
    }

    #[test]
    fn source_and_target_vocabularies_are_disjoint() {
        let task = small_task(1);
        let sources: BTreeSet<&str> = task.dictionary().source_words().collect();
        for (_, tgt) in task.dictionary().entries() {
            assert!(!sources.contains(tgt), "surface collision on {tgt:?}");
        }
        assert!(!sources.contains(PARTICLE));
    }

    #[test]
    fn gen_is_deterministic() {
        let a = small_task(7).gen_adapt().unwrap();
        let b = small_task(7).gen_adapt().unwrap();
        assert_eq!(a, b);
        let c = small_task(8).gen_adapt().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_gives_identity() {
        let spec = TaskSpec {
            adapt_size: 50,
            noise: NoiseProfile { drop_qmark: 0.0, declarative: 0.0, typo: 0.0 },
            ..TaskSpec::default()
        };
        let task = Task::new(spec).unwrap();
        for t in task.gen_adapt().unwrap() {
            assert_eq!(t.clean_src, t.noisy_src);
        }
    }

    #[test]
    fn full_qmark_drop_removes_all_question_marks() {
        let spec = TaskSpec {
            adapt_size: 80,
            noise: NoiseProfile { drop_qmark: 1.0, declarative: 0.3, typo: 0.2 },
            ..TaskSpec::default()
        };
        let task = Task::new(spec).unwrap();
        for t in task.gen_adapt().unwrap() {
            assert!(!t.noisy_src.ends_with('?'), "line {:?}", t.noisy_src);
        }
    }

    #[test]
    fn edit_logs_reverse_apply_to_clean_source() {
        let task = small_task(3);
        for t in task.gen_adapt().unwrap() {
            let recovered = task.reverse_apply_edits(&t).unwrap();
            assert_eq!(recovered, t.clean_src, "noisy {:?} log {:?}", t.noisy_src, t.edit_log);
        }
    }

    #[test]
    fn noise_rates_match_spec_within_two_percent() {
        let spec = TaskSpec { adapt_size: 10_000, seed: 5, ..TaskSpec::default() };
        let task = Task::new(spec).unwrap();
        let corpus = task.gen_adapt().unwrap();
        let n = corpus.len() as f64;
        let decl = corpus.iter().filter(|t| t.edit_log.declarative).count() as f64 / n;
        let qmark = corpus.iter().filter(|t| t.edit_log.qmark.is_some()).count() as f64 / n;
        let typo = corpus.iter().filter(|t| t.edit_log.typo.is_some()).count() as f64 / n;
        let p = NoiseProfile::default();
        assert!((decl - p.declarative).abs() < 0.02, "decl rate {decl}");
        assert!((qmark - p.drop_qmark).abs() < 0.02, "qmark rate {qmark}");
        // typo can fall back to "no eligible token" only for tiny sentences;
        // all templates have long words, so the rate should hold
        assert!((typo - p.typo).abs() < 0.02, "typo rate {typo}");
    }

    #[test]
    fn declarative_lines_use_statement_word_order() {
        let task = small_task(9);
        let corpus = task.gen_adapt().unwrap();
        let decl: Vec<_> = corpus.iter().filter(|t| t.edit_log.declarative).collect();
        assert!(!decl.is_empty());
        for t in decl {
            // statement forms never start with an auxiliary or wh word
            let first = split_words(&t.noisy_src)[0].clone();
            assert!(
                !matches!(first.as_str(), "does" | "will" | "can" | "how" | "what"),
                "line {:?}",
                t.noisy_src
            );
        }
    }

    #[test]
    fn pretrain_is_mostly_statements_and_clean() {
        let task = small_task(2);
        let corpus = task.gen_pretrain().unwrap();
        let q = corpus.iter().filter(|t| t.clean_src.ends_with('?')).count();
        assert!(q > 0 && (q as f64) < 0.1 * corpus.len() as f64, "{q} questions");
        for t in &corpus {
            assert_eq!(t.clean_src, t.noisy_src);
            assert_eq!(task.gold_translate(&t.clean_src).unwrap(), t.tgt);
        }
    }

    #[test]
    fn split_is_deterministic_disjoint_exhaustive() {
        let task = small_task(4);
        let corpus = task.gen_adapt().unwrap();
        let s1 = split(&corpus, [0.7, 0.1, 0.2], 11).unwrap();
        let s2 = split(&corpus, [0.7, 0.1, 0.2], 11).unwrap();
        assert_eq!(s1.train, s2.train);
        assert_eq!(s1.test, s2.test);
        assert_eq!(s1.train.len() + s1.valid.len() + s1.test.len(), corpus.len());
        // train sorted by reference length
        let lens: Vec<usize> = s1.train.iter().map(|t| split_words(&t.tgt).len()).collect();
        assert!(lens.windows(2).all(|w| w[0] <= w[1]));
        // all-in-train case
        let all = split(&corpus, [1.0, 0.0, 0.0], 11).unwrap();
        assert_eq!(all.train.len(), corpus.len());
        assert!(split(&corpus, [0.5, 0.2, 0.2], 11).is_err());
    }

    #[test]
    fn triples_round_trip_through_jsonl() {
        let task = small_task(6);
        let corpus = task.gen_adapt().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_triples(&path, &corpus).unwrap();
        let back = read_triples(&path).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let bad = TaskSpec {
            noise: NoiseProfile { drop_qmark: 1.5, ..NoiseProfile::default() },
            ..TaskSpec::default()
        };
        assert!(Task::new(bad).is_err());
        let empty = TaskSpec { entities: vec![], ..TaskSpec::default() };
        assert!(Task::new(empty).is_err());
    }

    #[test]
    fn gold_translate_bijection_on_sampled_instantiations() {
        let task = small_task(12);
        let mut seen_src = BTreeSet::new();
        let mut seen_tgt = BTreeSet::new();
        for t in task.gen_adapt().unwrap() {
            if seen_src.insert(t.clean_src.clone()) {
                assert!(
                    seen_tgt.insert(t.tgt.clone()),
                    "two sources map to target {:?}",
                    t.tgt
                );
            }
        }
        assert!(seen_src.len() > 100);
    }
}
