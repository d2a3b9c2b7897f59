//! NLI-based short-answer judge.

use serde::{Deserialize, Serialize};

use crate::scoring::{NliLabel, ScorerError, ScorerHandle, ScorerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    // human annotation labels
    Matched,
    Correct,
    Failed,
    Uncertain,
    // automated judge
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAJudgement {
    pub model_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_label: Option<NliLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    /// Model answer as premise, ground truth as hypothesis. One scorer call.
    #[default]
    Forward,
    /// Both directions must entail. Two scorer calls.
    Bidirectional,
}

pub fn answer_statement(answer: &str, question: &str) -> String {
    format!("\"{answer}\" is the answer to the question: \"{question}\"")
}

pub fn nli_qa_judge(
    model_id: &str,
    question: &str,
    model_answer: &str,
    ground_truth: &str,
    scorer: &ScorerHandle,
    mode: JudgeMode,
) -> Result<QAJudgement, ScorerError> {
    scorer.expect_kind(ScorerKind::Nli)?;
    let model_stmt = answer_statement(model_answer, question);
    let truth_stmt = answer_statement(ground_truth, question);
    let mut label = scorer.nli(&model_stmt, &truth_stmt)?;
    if mode == JudgeMode::Bidirectional && label == NliLabel::Entailment {
        label = scorer.nli(&truth_stmt, &model_stmt)?;
    }
    let verdict = if label == NliLabel::Entailment {
        Verdict::Success
    } else {
        Verdict::Failure
    };
    Ok(QAJudgement {
        model_id: model_id.to_string(),
        verdict,
        nli_label: Some(label),
    })
}
