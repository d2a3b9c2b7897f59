//! Pairwise win rates from per-sample reward scores.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalSample;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WinRateError {
    #[error("no reward score for sample {sample_id:?}, model {model_id:?}")]
    MissingScore { sample_id: String, model_id: String },
    #[error("no samples to compare")]
    Empty,
}

/// One reward score per (sample, model); loaded from JSONL rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTable {
    scores: HashMap<(String, String), f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub sample_id: String,
    pub model_id: String,
    pub score: f64,
}

impl RewardTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sample_id: &str, model_id: &str, score: f64) {
        self.scores
            .insert((sample_id.to_string(), model_id.to_string()), score);
    }

    pub fn get(&self, sample_id: &str, model_id: &str) -> Option<f64> {
        self.scores
            .get(&(sample_id.to_string(), model_id.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl FromIterator<RewardRow> for RewardTable {
    fn from_iter<I: IntoIterator<Item = RewardRow>>(iter: I) -> Self {
        let mut t = RewardTable::new();
        for r in iter {
            t.insert(&r.sample_id, &r.model_id, r.score);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateMatrix {
    pub model_ids: Vec<String>,
    /// `rates[a][b]`: percentage of samples where model a beats model b,
    /// ties counted half. Diagonal is `None`.
    pub rates: Vec<Vec<Option<f64>>>,
    pub n_samples: usize,
}

impl WinRateMatrix {
    pub fn rate(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.model_ids.iter().position(|m| m == a)?;
        let j = self.model_ids.iter().position(|m| m == b)?;
        self.rates[i][j]
    }
}

/// Every model that appears in any sample must have a score on every sample.
pub fn win_rate_matrix(samples: &[EvalSample], rewards: &RewardTable) -> Result<WinRateMatrix, WinRateError> {
    if samples.is_empty() {
        return Err(WinRateError::Empty);
    }
    let model_ids: Vec<String> = samples
        .iter()
        .flat_map(|s| s.responses.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let m = model_ids.len();
    let mut table = Vec::with_capacity(samples.len());
    for s in samples {
        let row = model_ids
            .iter()
            .map(|model| {
                rewards.get(&s.id, model).ok_or_else(|| WinRateError::MissingScore {
                    sample_id: s.id.clone(),
                    model_id: model.clone(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        table.push(row);
    }
    // doubled win counts: 2 per win, 1 per tie
    let mut halves = vec![vec![0u64; m]; m];
    for row in &table {
        for a in 0..m {
            for b in 0..m {
                if a == b {
                    continue;
                }
                halves[a][b] += match row[a].partial_cmp(&row[b]) {
                    Some(std::cmp::Ordering::Greater) => 2,
                    Some(std::cmp::Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    let n = samples.len();
    let rates = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| (a != b).then(|| 50.0 * halves[a][b] as f64 / n as f64))
                .collect()
        })
        .collect();
    Ok(WinRateMatrix {
        model_ids,
        rates,
        n_samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample(id: &str, models: &[&str]) -> EvalSample {
        EvalSample {
            id: id.into(),
            instruction: "q".into(),
            ground_truth: String::new(),
            responses: models.iter().map(|m| (m.to_string(), "r".to_string())).collect::<BTreeMap<_, _>>(),
            images: vec![],
        }
    }

    #[test]
    fn dominance_and_ties() {
        let samples = [sample("s1", &["A", "B"]), sample("s2", &["A", "B"])];
        let mut t = RewardTable::new();
        t.insert("s1", "A", 2.0);
        t.insert("s1", "B", 1.0);
        t.insert("s2", "A", 0.5);
        t.insert("s2", "B", -1.0);
        let w = win_rate_matrix(&samples, &t).unwrap();
        assert_eq!(w.rate("A", "B"), Some(100.0));
        assert_eq!(w.rate("B", "A"), Some(0.0));
        assert_eq!(w.rate("A", "A"), None);

        let mut t = RewardTable::new();
        for s in ["s1", "s2"] {
            t.insert(s, "A", 1.0);
            t.insert(s, "B", 1.0);
        }
        let w = win_rate_matrix(&samples, &t).unwrap();
        assert_eq!(w.rate("A", "B"), Some(50.0));
        assert_eq!(w.rate("B", "A"), Some(50.0));
    }

    #[test]
    fn missing_score() {
        let samples = [sample("s1", &["A", "B"])];
        let mut t = RewardTable::new();
        t.insert("s1", "A", 1.0);
        assert_eq!(
            win_rate_matrix(&samples, &t),
            Err(WinRateError::MissingScore { sample_id: "s1".into(), model_id: "B".into() })
        );
    }
}
