//! Random character-, word- and sentence-level text augmentation.
//!
//! Each level fires independently with probability one half. The three coins are
//! drawn up front so the firing rate never depends on the text; the levels then
//! run sentence, word, character so that sentence splitting sees clean text.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LEVEL_PROBABILITY: f64 = 0.5;
/// Fraction of (non-whitespace) characters touched by a character-level op.
pub const CHAR_RATE: f64 = 0.03;
/// Fraction of words touched by a word-level op.
pub const WORD_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharOp {
    Insert,
    Substitute,
    Swap,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordOp {
    Swap,
    Crop,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceOp {
    Drop,
    Shuffle,
}

/// Which levels fired, and with which operation. A level whose coin came up but
/// whose input was too short (one sentence, one word) records the op all the same.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentTrace {
    pub char_level: Option<CharOp>,
    pub word_level: Option<WordOp>,
    pub sentence_level: Option<SentenceOp>,
}

fn touched(len: usize, rate: f64) -> usize {
    ((len as f64 * rate).round() as usize).max(1)
}

/// Augment `text`. Returns the input unchanged when all three coins skip.
pub fn random_text_augment<R: Rng + ?Sized>(text: &str, rng: &mut R) -> String {
    random_text_augment_traced(text, rng).0
}

pub fn random_text_augment_traced<R: Rng + ?Sized>(text: &str, rng: &mut R) -> (String, AugmentTrace) {
    let char_coin = rng.gen_bool(LEVEL_PROBABILITY);
    let word_coin = rng.gen_bool(LEVEL_PROBABILITY);
    let sentence_coin = rng.gen_bool(LEVEL_PROBABILITY);
    let mut trace = AugmentTrace::default();
    let mut out = text.to_string();

    if sentence_coin {
        let op = *[SentenceOp::Drop, SentenceOp::Shuffle].choose(rng).unwrap();
        trace.sentence_level = Some(op);
        out = sentence_augment(&out, op, rng);
    }
    if word_coin {
        let op = *[WordOp::Swap, WordOp::Crop, WordOp::Delete].choose(rng).unwrap();
        trace.word_level = Some(op);
        out = word_augment(&out, op, rng);
    }
    if char_coin {
        let op = *[CharOp::Insert, CharOp::Substitute, CharOp::Swap, CharOp::Delete]
            .choose(rng)
            .unwrap();
        trace.char_level = Some(op);
        out = char_augment(&out, op, rng);
    }
    if out.trim().is_empty() {
        // every op keeps at least one unit, but never hand back blank text
        out = text.to_string();
    }
    (out, trace)
}

/// Split on `.`, `!` or `?` followed by whitespace. Terminal punctuation stays
/// with its sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(j, next)) = chars.peek() {
                if next.is_whitespace() {
                    let s = text[start..i + c.len_utf8()].trim();
                    if !s.is_empty() {
                        out.push(s);
                    }
                    start = j;
                }
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

pub fn sentence_augment<R: Rng + ?Sized>(text: &str, op: SentenceOp, rng: &mut R) -> String {
    let mut sentences = split_sentences(text);
    if sentences.len() < 2 {
        return text.to_string();
    }
    match op {
        SentenceOp::Drop => {
            let i = rng.gen_range(0..sentences.len());
            sentences.remove(i);
        }
        SentenceOp::Shuffle => sentences.shuffle(rng),
    }
    sentences.join(" ")
}

pub fn word_augment<R: Rng + ?Sized>(text: &str, op: WordOp, rng: &mut R) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < 2 {
        return text.to_string();
    }
    let n = touched(words.len(), WORD_RATE).min(words.len() - 1);
    match op {
        WordOp::Swap => {
            for _ in 0..n {
                let i = rng.gen_range(0..words.len() - 1);
                words.swap(i, i + 1);
            }
        }
        WordOp::Crop => {
            let start = rng.gen_range(0..=words.len() - n);
            words.drain(start..start + n);
        }
        WordOp::Delete => {
            let mut doomed = index::sample(rng, words.len(), n).into_vec();
            doomed.sort_unstable_by(|a, b| b.cmp(a));
            for i in doomed {
                words.remove(i);
            }
        }
    }
    words.join(" ")
}

fn random_letter<R: Rng + ?Sized>(rng: &mut R) -> char {
    (b'a' + rng.gen_range(0..26u8)) as char
}

pub fn char_augment<R: Rng + ?Sized>(text: &str, op: CharOp, rng: &mut R) -> String {
    let chars: Vec<char> = text.chars().collect();
    let visible: Vec<usize> = (0..chars.len()).filter(|&i| !chars[i].is_whitespace()).collect();
    if visible.is_empty() {
        return text.to_string();
    }
    let n = touched(visible.len(), CHAR_RATE);
    match op {
        CharOp::Insert => {
            let mut out = chars;
            for _ in 0..n {
                let at = rng.gen_range(0..=out.len());
                out.insert(at, random_letter(rng));
            }
            out.into_iter().collect()
        }
        CharOp::Substitute => {
            let picks: Vec<usize> = index::sample(rng, visible.len(), n.min(visible.len()))
                .into_iter()
                .map(|k| visible[k])
                .collect();
            let replacements: Vec<char> = picks
                .iter()
                .map(|&i| loop {
                    let c = random_letter(rng);
                    if c != chars[i] {
                        break c;
                    }
                })
                .collect();
            char_substitute(text, &picks, &replacements)
        }
        CharOp::Swap => {
            let pairs: Vec<usize> = (0..chars.len().saturating_sub(1))
                .filter(|&i| !chars[i].is_whitespace() && !chars[i + 1].is_whitespace())
                .collect();
            if pairs.is_empty() {
                return text.to_string();
            }
            let picks: Vec<usize> = (0..n).map(|_| pairs[rng.gen_range(0..pairs.len())]).collect();
            char_swap(text, &picks)
        }
        CharOp::Delete => {
            let n = n.min(visible.len() - 1);
            if n == 0 {
                return text.to_string();
            }
            let picks: Vec<usize> = index::sample(rng, visible.len(), n)
                .into_iter()
                .map(|k| visible[k])
                .collect();
            char_delete(text, &picks)
        }
    }
}

/// Remove the characters at the given (char) indices.
pub fn char_delete(text: &str, indices: &[usize]) -> String {
    text.chars()
        .enumerate()
        .filter(|(i, _)| !indices.contains(i))
        .map(|(_, c)| c)
        .collect()
}

/// Replace the character at `indices[k]` with `replacements[k]`.
pub fn char_substitute(text: &str, indices: &[usize], replacements: &[char]) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    for (&i, &c) in indices.iter().zip(replacements) {
        if i < chars.len() {
            chars[i] = c;
        }
    }
    chars.into_iter().collect()
}

/// Swap each character at `i` with its right neighbour, in order.
pub fn char_swap(text: &str, indices: &[usize]) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    for &i in indices {
        if i + 1 < chars.len() {
            chars.swap(i, i + 1);
        }
    }
    chars.into_iter().collect()
}
