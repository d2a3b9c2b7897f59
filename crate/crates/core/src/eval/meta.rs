//! Agreement between reward-score order and human preference rankings.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RewardTable;

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("no strictly ordered pairs in the human rankings")]
    EmptyPairSet,
    #[error("no reward score for sample {sample_id:?}, model {model_id:?}")]
    MissingScore { sample_id: String, model_id: String },
}

/// One human annotation: models best-first, with groups judged equally good.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanRanking {
    pub sample_id: String,
    pub ranking: Vec<String>,
    #[serde(default)]
    pub ties: Vec<Vec<String>>,
}

impl HumanRanking {
    fn check(&self) -> Result<(), String> {
        for (i, m) in self.ranking.iter().enumerate() {
            if self.ranking[..i].contains(m) {
                return Err(format!("model {m:?} ranked twice"));
            }
        }
        for group in &self.ties {
            if let Some(m) = group.iter().find(|m| !self.ranking.contains(m)) {
                return Err(format!("tied model {m:?} not in ranking"));
            }
        }
        Ok(())
    }

    fn tied(&self, a: &str, b: &str) -> bool {
        self.ties
            .iter()
            .any(|g| g.iter().any(|m| m == a) && g.iter().any(|m| m == b))
    }

    /// (preferred, other) for every pair not marked as tied.
    pub fn ordered_pairs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        let r = &self.ranking;
        (0..r.len()).flat_map(move |i| {
            (i + 1..r.len()).filter_map(move |j| {
                (!self.tied(&r[i], &r[j])).then(|| (r[i].as_str(), r[j].as_str()))
            })
        })
    }
}

pub fn parse_rankings(reader: impl BufRead) -> Result<Vec<HumanRanking>, MetaError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| MetaError::ParseError { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: HumanRanking = serde_json::from_str(&line)
            .map_err(|e| MetaError::ParseError { line: line_no, message: e.to_string() })?;
        rec.check()
            .map_err(|message| MetaError::ParseError { line: line_no, message })?;
        out.push(rec);
    }
    Ok(out)
}

/// Fraction of human-ordered pairs where the preferred model also has the
/// strictly higher reward. Equal rewards count as disagreement.
pub fn meta_agreement(rewards: &RewardTable, rankings: &[HumanRanking]) -> Result<f64, MetaError> {
    let mut total = 0usize;
    let mut agree = 0usize;
    for r in rankings {
        for (better, worse) in r.ordered_pairs() {
            let score = |m: &str| {
                rewards.get(&r.sample_id, m).ok_or_else(|| MetaError::MissingScore {
                    sample_id: r.sample_id.clone(),
                    model_id: m.to_string(),
                })
            };
            total += 1;
            if score(better)? > score(worse)? {
                agree += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetaError::EmptyPairSet);
    }
    Ok(agree as f64 / total as f64)
}

pub fn meta_agreement_file(rewards: &RewardTable, path: &Path) -> Result<f64, MetaError> {
    let file = std::fs::File::open(path).map_err(|source| MetaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let rankings = parse_rankings(std::io::BufReader::new(file))?;
    meta_agreement(rewards, &rankings)
}
