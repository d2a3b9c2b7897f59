use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use instruct_curate::eval::winrate::RewardRow;
use instruct_curate::eval::{
    alignment_tax, meta_agreement_file, nli_qa_judge, rouge_l_with, sts_similarity, win_rate_matrix, EvalSample,
    JudgeMode, ModelScores, RewardTable, Verdict,
};
use instruct_curate::jsonl::{read_jsonl, write_jsonl};
use instruct_curate::scoring::ScorerKind;

use super::Ctx;
use crate::error::{CliError, CliResult};
use crate::manifest::{sidecar, write_json, ManifestBuilder};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(subcommand)]
    metric: Metric,
}

#[derive(Subcommand, Debug)]
enum Metric {
    /// Rouge-L F of every model response against the ground truth
    Rouge(PerSample),
    /// Embedding similarity of every model response to the ground truth
    Sts(PerSample),
    /// Entailment-based answer judging
    Qa {
        #[command(flatten)]
        io: PerSample,
        /// Require entailment in both directions
        #[arg(long)]
        bidirectional: bool,
    },
    /// Pairwise win-rate matrix from reward scores
    Winrate {
        #[arg(long)]
        input: PathBuf,
        /// Precomputed reward rows; otherwise the reward scorer is queried
        #[arg(long)]
        rewards: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Summed per-task score drop between two models
    Tax {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Name of the tuning step that turned `before` into `after`
        #[arg(long)]
        label: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Agreement of reward-model preferences with human rankings
    Meta {
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long)]
        human: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct PerSample {
    /// Evaluation samples, one per line
    #[arg(long)]
    input: PathBuf,
    /// Per-(sample, model) rows; the per-model summary goes to `<output>.summary.json`
    #[arg(long)]
    output: PathBuf,
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    sample_id: &'a str,
    model_id: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct ModelSummary {
    n: usize,
    mean: f64,
}

fn load_samples(path: &Path) -> CliResult<Vec<EvalSample>> {
    let samples: Vec<EvalSample> = read_jsonl(path)?;
    for (i, s) in samples.iter().enumerate() {
        s.check().map_err(|e| CliError::invalid(format!("{}: line {}: {e}", path.display(), i + 1)))?;
    }
    Ok(samples)
}

fn pairs(samples: &[EvalSample]) -> Vec<(&EvalSample, &str, &str)> {
    samples
        .iter()
        .flat_map(|s| s.responses.iter().map(move |(m, r)| (s, m.as_str(), r.as_str())))
        .collect()
}

fn summarize<'a>(rows: impl IntoIterator<Item = (&'a str, f64)>) -> BTreeMap<&'a str, ModelSummary> {
    let mut acc: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (m, v) in rows {
        let e = acc.entry(m).or_default();
        e.0 += 1;
        e.1 += v;
    }
    acc.into_iter().map(|(m, (n, sum))| (m, ModelSummary { n, mean: sum / n as f64 })).collect()
}

fn write_scores(
    manifest: &mut ManifestBuilder,
    io: &PerSample,
    rows: &[ScoreRow],
) -> CliResult<()> {
    write_jsonl(&io.output, rows)?;
    let summary_path = sidecar(&io.output, "summary.json");
    write_json(&summary_path, &summarize(rows.iter().map(|r| (r.model_id, r.score))))?;
    manifest.input(&io.input).output(&io.output).output(&summary_path).count("rows", rows.len());
    Ok(())
}

pub fn run(ctx: &Ctx, args: EvalArgs) -> CliResult<()> {
    match args.metric {
        Metric::Rouge(io) => {
            let mut manifest = ctx.manifest("eval rouge");
            let samples = load_samples(&io.input)?;
            let rows: Vec<ScoreRow> = pairs(&samples)
                .into_iter()
                .map(|(s, m, r)| ScoreRow { sample_id: &s.id, model_id: m, score: rouge_l_with(r, &s.ground_truth, ctx.cfg.rouge) })
                .collect();
            write_scores(&mut manifest, &io, &rows)?;
            manifest.finish(&io.output)?;
        }
        Metric::Sts(io) => {
            let mut manifest = ctx.manifest("eval sts");
            let scorer = ctx.require_scorer(ScorerKind::Sts)?;
            let samples = load_samples(&io.input)?;
            let rows = pairs(&samples)
                .into_par_iter()
                .map(|(s, m, r)| {
                    let score = sts_similarity(r, &s.ground_truth, &scorer)?;
                    Ok(ScoreRow { sample_id: &s.id, model_id: m, score })
                })
                .collect::<CliResult<Vec<_>>>()?;
            write_scores(&mut manifest, &io, &rows)?;
            manifest.finish(&io.output)?;
        }
        Metric::Qa { io, bidirectional } => {
            let mut manifest = ctx.manifest("eval qa");
            let mode = if bidirectional { JudgeMode::Bidirectional } else { ctx.cfg.judge.mode };
            let scorer = ctx.require_scorer(ScorerKind::Nli)?;
            let samples = load_samples(&io.input)?;
            #[derive(Serialize)]
            struct Row<'a> {
                sample_id: &'a str,
                #[serde(flatten)]
                judgement: instruct_curate::eval::QAJudgement,
            }
            let rows = pairs(&samples)
                .into_par_iter()
                .map(|(s, m, r)| {
                    let judgement = nli_qa_judge(m, &s.instruction, r, &s.ground_truth, &scorer, mode)?;
                    Ok(Row { sample_id: &s.id, judgement })
                })
                .collect::<CliResult<Vec<_>>>()?;
            write_jsonl(&io.output, &rows)?;
            let summary = summarize(
                rows.iter()
                    .map(|r| (r.judgement.model_id.as_str(), (r.judgement.verdict == Verdict::Success) as u8 as f64)),
            );
            let summary_path = sidecar(&io.output, "summary.json");
            write_json(&summary_path, &summary)?;
            manifest.input(&io.input).output(&io.output).output(&summary_path).count("rows", rows.len());
            manifest.details(serde_json::json!({ "mode": mode })).finish(&io.output)?;
        }
        Metric::Winrate { input, rewards, output } => {
            let mut manifest = ctx.manifest("eval winrate");
            let samples = load_samples(&input)?;
            manifest.input(&input).output(&output);
            let table: RewardTable = match &rewards {
                Some(path) => {
                    manifest.input(path);
                    read_jsonl::<RewardRow>(path)?.into_iter().collect()
                }
                None => {
                    let scorer = ctx.require_scorer(ScorerKind::Reward)?;
                    let rows = pairs(&samples)
                        .into_par_iter()
                        .map(|(s, m, r)| {
                            let score = scorer.reward(&s.instruction, r)?;
                            Ok(RewardRow { sample_id: s.id.clone(), model_id: m.to_string(), score })
                        })
                        .collect::<CliResult<Vec<_>>>()?;
                    let rewards_path = sidecar(&output, "rewards.jsonl");
                    write_jsonl(&rewards_path, &rows)?;
                    manifest.output(&rewards_path);
                    rows.into_iter().collect()
                }
            };
            let matrix = win_rate_matrix(&samples, &table)?;
            write_json(&output, &matrix)?;
            manifest.count("samples", matrix.n_samples).count("models", matrix.model_ids.len());
            manifest.finish(&output)?;
        }
        Metric::Tax { before, after, label, output } => {
            let mut manifest = ctx.manifest("eval tax");
            let read = |p: &Path| -> CliResult<ModelScores> {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))
            };
            let report = alignment_tax(&read(&before)?, &read(&after)?, &label)?;
            write_json(&output, &report)?;
            log::info!("alignment tax of {label:?}: {}", report.tax);
            manifest.input(&before).input(&after).output(&output).count("tasks", report.tasks.len());
            manifest.finish(&output)?;
        }
        Metric::Meta { rewards, human, output } => {
            let mut manifest = ctx.manifest("eval meta");
            let table: RewardTable = read_jsonl::<RewardRow>(&rewards)?.into_iter().collect();
            let agreement = meta_agreement_file(&table, &human)?;
            write_json(&output, &serde_json::json!({ "agreement": agreement }))?;
            log::info!("reward/human agreement {agreement:.4}");
            manifest.input(&rewards).input(&human).output(&output);
            manifest.finish(&output)?;
        }
    }
    Ok(())
}
