//! Character-level noise injection for robust pre-training: natural noise
//! (random letter substitutions), keyboard noise (adjacent-key
//! substitutions), and vowel removal. Whitespace is never altered.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{derive_rng, label};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid noise config: {0}")]
    InvalidConfig(String),
    #[error("bad keyboard layout file: {0}")]
    BadLayout(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-character probabilities for the three noise types.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub natural_p: f64,
    pub keyboard_p: f64,
    pub vowel_p: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(natural_p: f64, keyboard_p: f64, vowel_p: f64, seed: u64) -> Result<Self, NoiseError> {
        for (name, p) in [("natural_p", natural_p), ("keyboard_p", keyboard_p), ("vowel_p", vowel_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(NoiseError::InvalidConfig(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(NoiseConfig { natural_p, keyboard_p, vowel_p, seed })
    }

    /// The robust pre-training setting: 1% natural, 5% keyboard, 5% vowels.
    pub fn robust_default(seed: u64) -> Self {
        NoiseConfig { natural_p: 0.01, keyboard_p: 0.05, vowel_p: 0.05, seed }
    }
}

/// Physical adjacency of keyboard characters.
#[derive(Debug, Clone)]
pub struct KeyboardMap {
    neighbors: BTreeMap<char, Vec<char>>,
}

const QWERTY_LAYOUT: &str = include_str!("../data/qwerty_adjacency.txt");

impl KeyboardMap {
    /// The QWERTY layout shipped with the crate.
    pub fn qwerty() -> KeyboardMap {
        KeyboardMap::parse(QWERTY_LAYOUT).expect("bundled layout is valid")
    }

    pub fn load(path: &Path) -> Result<KeyboardMap, NoiseError> {
        KeyboardMap::parse(&std::fs::read_to_string(path)?)
    }

    /// Parse an adjacency list: one key per line followed by its neighbors,
    /// whitespace separated; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<KeyboardMap, NoiseError> {
        let mut neighbors: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let key = fields
                .next()
                .and_then(|f| {
                    let mut cs = f.chars();
                    cs.next().filter(|_| cs.next().is_none())
                })
                .ok_or_else(|| NoiseError::BadLayout(format!("line {}: bad key", lineno + 1)))?;
            let ns: Vec<char> = fields
                .map(|f| {
                    let mut cs = f.chars();
                    cs.next()
                        .filter(|_| cs.next().is_none())
                        .ok_or_else(|| NoiseError::BadLayout(format!("line {}: bad neighbor", lineno + 1)))
                })
                .collect::<Result<_, _>>()?;
            if ns.is_empty() {
                return Err(NoiseError::BadLayout(format!("line {}: key {key:?} has no neighbors", lineno + 1)));
            }
            neighbors.insert(key, ns);
        }
        let map = KeyboardMap { neighbors };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<(), NoiseError> {
        for c in 'a'..='z' {
            if self.neighbors(c).is_none() {
                return Err(NoiseError::BadLayout(format!("letter {c:?} has no neighbors")));
            }
        }
        for (&k, ns) in &self.neighbors {
            for n in ns {
                let back = self.neighbors.get(n).map(|v| v.contains(&k)).unwrap_or(false);
                if !back {
                    return Err(NoiseError::BadLayout(format!("adjacency not symmetric: {k} -> {n}")));
                }
            }
        }
        Ok(())
    }

    pub fn neighbors(&self, c: char) -> Option<&[char]> {
        self.neighbors.get(&c.to_ascii_lowercase()).map(|v| v.as_slice())
    }
}

/// Event and eligibility counters for rate measurement.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoiseStats {
    pub chars_seen: usize,
    pub natural_eligible: usize,
    pub natural_events: usize,
    pub keyboard_eligible: usize,
    pub keyboard_events: usize,
    pub vowel_eligible: usize,
    pub vowel_events: usize,
}

impl NoiseStats {
    pub fn natural_rate(&self) -> f64 {
        self.natural_events as f64 / self.natural_eligible.max(1) as f64
    }
    pub fn keyboard_rate(&self) -> f64 {
        self.keyboard_events as f64 / self.keyboard_eligible.max(1) as f64
    }
    pub fn vowel_rate(&self) -> f64 {
        self.vowel_events as f64 / self.vowel_eligible.max(1) as f64
    }

    pub fn merge(&mut self, other: &NoiseStats) {
        self.chars_seen += other.chars_seen;
        self.natural_eligible += other.natural_eligible;
        self.natural_events += other.natural_events;
        self.keyboard_eligible += other.keyboard_eligible;
        self.keyboard_events += other.keyboard_events;
        self.vowel_eligible += other.vowel_eligible;
        self.vowel_events += other.vowel_events;
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u')
}

fn noisy_chars(
    text: &str,
    cfg: &NoiseConfig,
    keyboard: &KeyboardMap,
    rng: &mut ChaCha12Rng,
    stats: &mut NoiseStats,
) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        stats.chars_seen += 1;
        if c.is_whitespace() {
            out.push(c);
            continue;
        }
        let mut cur = c;

        // natural noise: substitute a different random letter
        stats.natural_eligible += 1;
        if rng.gen::<f64>() < cfg.natural_p {
            let mut repl = char::from(b'a' + rng.gen_range(0..26u8));
            while repl == cur.to_ascii_lowercase() {
                repl = char::from(b'a' + rng.gen_range(0..26u8));
            }
            cur = repl;
            stats.natural_events += 1;
        }

        // keyboard noise: substitute an adjacent key
        if let Some(ns) = keyboard.neighbors(cur) {
            stats.keyboard_eligible += 1;
            if rng.gen::<f64>() < cfg.keyboard_p {
                cur = ns[rng.gen_range(0..ns.len())];
                stats.keyboard_events += 1;
            }
        }

        // vowel removal
        if is_vowel(cur) {
            stats.vowel_eligible += 1;
            if rng.gen::<f64>() < cfg.vowel_p {
                stats.vowel_events += 1;
                continue;
            }
        }
        out.push(cur);
    }
    out
}

/// Apply all three noise types to one text with a single RNG stream derived
/// from `cfg.seed`. Deterministic; whitespace is never altered.
pub fn inject_noise(text: &str, cfg: &NoiseConfig) -> String {
    inject_noise_with_stats(text, cfg).0
}

pub fn inject_noise_with_stats(text: &str, cfg: &NoiseConfig) -> (String, NoiseStats) {
    let keyboard = KeyboardMap::qwerty();
    let mut rng = derive_rng(cfg.seed, &[label("noise")]);
    let mut stats = NoiseStats::default();
    let out = noisy_chars(text, cfg, &keyboard, &mut rng, &mut stats);
    (out, stats)
}

/// Per-line noise with independent RNG streams derived from
/// `(cfg.seed, line index)`, so output does not depend on how the corpus is
/// chunked.
pub fn inject_noise_lines(lines: &[String], cfg: &NoiseConfig) -> (Vec<String>, NoiseStats) {
    let keyboard = KeyboardMap::qwerty();
    let mut stats = NoiseStats::default();
    let out = lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let mut rng = derive_rng(cfg.seed, &[label("noise-line"), i as u64]);
            noisy_chars(line, cfg, &keyboard, &mut rng, &mut stats)
        })
        .collect();
    (out, stats)
}
