//! Alignment tax: summed per-task performance lost by multimodal tuning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaxError {
    #[error("task sets differ; only before: {only_before:?}, only after: {only_after:?}")]
    TaskMismatch {
        only_before: Vec<String>,
        only_after: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model_id: String,
    /// task id → score
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub p_before: f64,
    pub p_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxReport {
    pub model_before: String,
    pub model_after: String,
    pub tasks: Vec<TaskScore>,
    /// Σ (p_before − p_after); negative means the tuned model improved.
    pub tax: f64,
    pub tuning_label: String,
}

pub fn alignment_tax(
    before: &ModelScores,
    after: &ModelScores,
    tuning_label: &str,
) -> Result<TaxReport, TaxError> {
    let only_before: Vec<String> = before
        .scores
        .keys()
        .filter(|k| !after.scores.contains_key(*k))
        .cloned()
        .collect();
    let only_after: Vec<String> = after
        .scores
        .keys()
        .filter(|k| !before.scores.contains_key(*k))
        .cloned()
        .collect();
    if !only_before.is_empty() || !only_after.is_empty() {
        return Err(TaxError::TaskMismatch { only_before, only_after });
    }
    let tasks: Vec<TaskScore> = before
        .scores
        .iter()
        .map(|(task, &p_before)| TaskScore {
            task_id: task.clone(),
            p_before,
            p_after: after.scores[task],
        })
        .collect();
    let tax = tasks.iter().map(|t| t.p_before - t.p_after).sum();
    Ok(TaxReport {
        model_before: before.model_id.clone(),
        model_after: after.model_id.clone(),
        tasks,
        tax,
        tuning_label: tuning_label.to_string(),
    })
}
