//! Scoring of model outputs: Rouge-L, sentence similarity, the NLI answer
//! judge, reward win rates, alignment tax and agreement with human rankings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scoring::{ScorerError, ScorerHandle, ScorerKind};

pub mod judge;
pub mod meta;
pub mod rouge;
pub mod tax;
pub mod winrate;

pub use judge::{answer_statement, nli_qa_judge, JudgeMode, QAJudgement, Verdict};
pub use meta::{meta_agreement, meta_agreement_file, HumanRanking, MetaError};
pub use rouge::{rouge_l, rouge_l_with, rouge_tokens, RougeConfig};
pub use tax::{alignment_tax, ModelScores, TaxError, TaxReport};
pub use winrate::{win_rate_matrix, RewardTable, WinRateError, WinRateMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub ground_truth: String,
    /// model id → response
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub images: Vec<String>,
}

impl EvalSample {
    pub fn check(&self) -> Result<(), String> {
        if self.responses.is_empty() {
            return Err(format!("eval sample {:?} has no model responses", self.id));
        }
        Ok(())
    }
}

/// Similarity of two texts in [-1, 1], straight from the scorer.
pub fn sts_similarity(a: &str, b: &str, scorer: &ScorerHandle) -> Result<f64, ScorerError> {
    scorer.expect_kind(ScorerKind::Sts)?;
    let s = scorer.sts(a, b)?;
    if !(-1.0..=1.0).contains(&s) {
        return Err(ScorerError::Malformed(format!("similarity {s} outside [-1, 1]")));
    }
    Ok(s)
}
