//! Rule-based source-side grammatical error correction: typo repair against
//! a closed lexicon, declarative-to-interrogative frame inversion, and
//! terminal question-mark restoration. Idempotent on its own output.

use std::collections::BTreeSet;

use crate::corpus::{Pat, Task, TEMPLATES};
use crate::text::split_words;

/// Any text-to-text source corrector; a learned model can be substituted for
/// the rule-based one behind this interface.
pub trait Corrector: Send + Sync {
    fn correct(&self, text: &str) -> String;
}

/// Passes text through unchanged (useful as a null corrector).
pub struct IdentityCorrector;

impl Corrector for IdentityCorrector {
    fn correct(&self, text: &str) -> String {
        text.to_string()
    }
}

/// Classic Levenshtein distance over characters.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance_tokens(&a, &b)
}

/// Levenshtein distance over arbitrary token slices.
pub fn edit_distance_tokens<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone)]
enum FramePat {
    Word(String),
    /// Matches one token; the final slot of a pattern may absorb several.
    Slot(usize),
}

#[derive(Debug, Clone)]
struct Frame {
    statement: Vec<FramePat>,
    question: Vec<FramePat>,
    fixed_words: usize,
}

fn to_frame_pats(pats: &[Pat]) -> Vec<FramePat> {
    pats.iter()
        .map(|p| match p {
            Pat::W(w) => FramePat::Word(w.to_string()),
            Pat::Slot(i) => FramePat::Slot(*i),
        })
        .collect()
}

/// The rule-based corrector. Built from a task (lexicon = template words +
/// entities, frames = the task's declarative patterns) or from explicit
/// parts.
pub struct GecCorrector {
    lexicon: BTreeSet<String>,
    frames: Vec<Frame>,
}

impl GecCorrector {
    pub fn from_task(task: &Task) -> GecCorrector {
        let lexicon = task.dictionary().source_words().map(|s| s.to_string()).collect();
        let mut frames: Vec<Frame> = TEMPLATES
            .iter()
            .map(|t| Frame {
                statement: to_frame_pats(t.statement),
                question: to_frame_pats(t.question),
                fixed_words: t.statement.iter().filter(|p| matches!(p, Pat::W(_))).count(),
            })
            .collect();
        // prefer the most specific frame when several match
        frames.sort_by(|a, b| b.fixed_words.cmp(&a.fixed_words));
        GecCorrector { lexicon, frames }
    }

    /// Lexicon-only corrector (typo repair and "?" restoration, no frames).
    pub fn from_lexicon(words: impl IntoIterator<Item = String>) -> GecCorrector {
        GecCorrector { lexicon: words.into_iter().collect(), frames: Vec::new() }
    }

    /// Repair a single token: an out-of-lexicon token within edit distance
    /// 1..=2 of a unique closest lexicon word is replaced by that word; ties
    /// leave the token unchanged.
    fn repair_token(&self, token: &str) -> String {
        if token.chars().all(|c| matches!(c, '.' | '?' | '!')) {
            return token.to_string();
        }
        let lower = token.to_ascii_lowercase();
        if self.lexicon.contains(&lower) {
            return token.to_string();
        }
        let token_len = lower.chars().count() as isize;
        let mut best = usize::MAX;
        let mut best_word: Option<&str> = None;
        let mut tied = false;
        for word in &self.lexicon {
            if (word.chars().count() as isize - token_len).abs() > 2 {
                continue;
            }
            let d = edit_distance(&lower, word);
            if d < best {
                best = d;
                best_word = Some(word);
                tied = false;
            } else if d == best {
                tied = true;
            }
        }
        match (best, best_word, tied) {
            (1..=2, Some(w), false) => w.to_string(),
            _ => token.to_string(),
        }
    }

    fn match_frame(&self, body: &[String], pattern: &[FramePat]) -> Option<Vec<String>> {
        let multi_tail = matches!(pattern.last(), Some(FramePat::Slot(_)));
        if multi_tail {
            if body.len() < pattern.len() {
                return None;
            }
        } else if body.len() != pattern.len() {
            return None;
        }
        let mut slots: Vec<Option<String>> = vec![None, None];
        for (k, pat) in pattern.iter().enumerate() {
            match pat {
                FramePat::Word(w) => {
                    if !body[k].eq_ignore_ascii_case(w) {
                        return None;
                    }
                }
                FramePat::Slot(i) => {
                    if k == pattern.len() - 1 {
                        slots[*i] = Some(body[k..].join(" "));
                    } else {
                        slots[*i] = Some(body[k].clone());
                    }
                }
            }
        }
        Some(slots.into_iter().map(|s| s.unwrap_or_default()).collect())
    }

    fn instantiate(&self, pattern: &[FramePat], slots: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for pat in pattern {
            match pat {
                FramePat::Word(w) => out.push(w.clone()),
                FramePat::Slot(i) => out.extend(slots[*i].split(' ').map(|s| s.to_string())),
            }
        }
        out
    }
}

impl Corrector for GecCorrector {
    /// Pipeline: (1) typo repair, (2) declarative-to-interrogative frame
    /// inversion, (3) terminal "?" restoration.
    fn correct(&self, text: &str) -> String {
        let mut tokens: Vec<String> =
            split_words(text).iter().map(|t| self.repair_token(t)).collect();
        while tokens.last().map(|t| matches!(t.as_str(), "." | "?" | "!")).unwrap_or(false) {
            tokens.pop();
        }
        if tokens.is_empty() {
            return "?".to_string();
        }
        for frame in &self.frames {
            if let Some(slots) = self.match_frame(&tokens, &frame.statement) {
                tokens = self.instantiate(&frame.question, &slots);
                break;
            }
        }
        tokens.push("?".to_string());
        tokens.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaskSpec;

    fn corrector() -> GecCorrector {
        GecCorrector::from_task(&Task::new(TaskSpec::default()).unwrap())
    }

    #[test]
    fn inverts_statement_form_questions() {
        let gec = corrector();
        assert_eq!(gec.correct("It works in samsung a50s"), "does it work in samsung a50s ?");
        assert_eq!(gec.correct("it works with alpha ."), "does it work with alpha ?");
        assert_eq!(gec.correct("the tripod lasts long"), "how long does the tripod last ?");
    }

    #[test]
    fn repairs_spelling_and_restores_the_mark() {
        let gec = corrector();
        assert_eq!(
            gec.correct("what is the defference between the two"),
            "what is the difference between the two ?"
        );
        assert_eq!(gec.correct("does it wrk with alpha"), "does it work with alpha ?");
    }

    #[test]
    fn clean_questions_pass_through() {
        let gec = corrector();
        for s in [
            "does it work with alpha ?",
            "will it fit in xylo ?",
            "what is the difference between kilo and lima ?",
        ] {
            assert_eq!(gec.correct(s), s);
        }
    }

    #[test]
    fn is_idempotent_on_generated_noise() {
        let spec = TaskSpec { adapt_size: 300, seed: 21, ..TaskSpec::default() };
        let task = Task::new(spec).unwrap();
        let gec = GecCorrector::from_task(&task);
        for t in task.gen_adapt().unwrap() {
            let once = gec.correct(&t.noisy_src);
            assert_eq!(gec.correct(&once), once, "noisy {:?}", t.noisy_src);
        }
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("", ""), 0);
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(edit_distance("defference", "difference"), 1);
        assert_eq!(edit_distance("wrks", "works"), 1);
        assert_eq!(edit_distance("ab", "ba"), 2);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn distance_ties_leave_the_token_unchanged() {
        let gec = GecCorrector::from_lexicon(["cat".to_string(), "bat".to_string()]);
        // "rat" is distance 1 from both
        assert_eq!(gec.correct("rat"), "rat ?");
        // unique match repairs
        let gec2 = GecCorrector::from_lexicon(["cat".to_string(), "dog".to_string()]);
        assert_eq!(gec2.correct("cay"), "cat ?");
    }

    #[test]
    fn empty_input_becomes_a_bare_question_mark() {
        assert_eq!(corrector().correct(""), "?");
        assert_eq!(corrector().correct("..."), "?");
    }
}
