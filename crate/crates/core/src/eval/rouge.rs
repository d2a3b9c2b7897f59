//! Rouge-L over lowercased whitespace tokens with terminal punctuation stripped.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RougeConfig {
    /// Recall weight; 1.0 is the harmonic mean of precision and recall.
    pub beta: f64,
}

impl Default for RougeConfig {
    fn default() -> Self {
        RougeConfig { beta: 1.0 }
    }
}

pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_end_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F-measure from LCS precision/recall given token counts.
pub fn f_from_lcs(lcs: usize, cand_len: usize, ref_len: usize, beta: f64) -> f64 {
    if lcs == 0 || cand_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand_len as f64;
    let r = lcs as f64 / ref_len as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l_with(candidate: &str, reference: &str, config: RougeConfig) -> f64 {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    f_from_lcs(lcs_len(&c, &r), c.len(), r.len(), config.beta)
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_with(candidate, reference, RougeConfig::default())
}
