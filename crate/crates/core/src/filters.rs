//! Quality filters for rewritten samples.
//!
//! Rule-based filters (length, change) run first for every sample; model-based
//! filters are routed by category: sentence similarity and per-paragraph
//! CLIPScore for captioning, NLI contradiction for VQA. The first rejection ends
//! a sample's chain, so model scorers are never called for rule rejects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, InstructionSample};
use crate::eval::judge::answer_statement;
use crate::scoring::{NliLabel, ScorerError, ScorerHandle, ScorerKind};

pub const DEFAULT_STS_THRESHOLD: f64 = 0.40;
pub const DEFAULT_CLIPSCORE_THRESHOLD: f64 = 17.0;
pub const DEFAULT_MIN_CHARS: usize = 20;
pub const DEFAULT_MAX_CHARS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Length,
    Change,
    Sts,
    Clipscore,
    Nli,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::Length,
        FilterKind::Change,
        FilterKind::Sts,
        FilterKind::Clipscore,
        FilterKind::Nli,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Length => "length",
            FilterKind::Change => "change",
            FilterKind::Sts => "sts",
            FilterKind::Clipscore => "clipscore",
            FilterKind::Nli => "nli",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum FilterError {
    #[error("bad filter config: {0}")]
    BadConfig(String),
    #[error("sample {sample_id:?}: {source}")]
    Scorer {
        sample_id: String,
        source: ScorerError,
    },
    #[error("sample {0:?} has no raw annotation to compare against")]
    MissingRawAnnotation(String),
    #[error("sample {0:?} has no image to score against")]
    MissingImage(String),
}

/// Keep or reject with inclusive bounds on the Unicode scalar count.
pub fn length_filter(response: &str, min_chars: usize, max_chars: usize) -> Result<bool, FilterError> {
    if min_chars >= max_chars {
        return Err(FilterError::BadConfig(format!(
            "min_chars {min_chars} must be below max_chars {max_chars}"
        )));
    }
    let n = response.chars().count();
    Ok(n >= min_chars && n <= max_chars)
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keep iff the rewrite differs from the raw text after collapsing whitespace.
/// Case differences count as a change.
pub fn change_filter(raw: &str, rewritten: &str) -> bool {
    collapse_whitespace(raw) != collapse_whitespace(rewritten)
}

/// Keep iff the similarity score is not below the threshold. Returns the score too.
pub fn sts_filter(
    original: &str,
    rewritten: &str,
    scorer: &ScorerHandle,
    threshold: f64,
) -> Result<(bool, f64), ScorerError> {
    scorer.expect_kind(ScorerKind::Sts)?;
    let score = scorer.sts(original, rewritten)?;
    Ok((score >= threshold, score))
}

/// Paragraphs are separated by one or more blank lines.
pub fn split_paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphOutcome {
    /// Surviving paragraphs rejoined with blank lines; `None` when every one dropped.
    pub text: Option<String>,
    pub scores: Vec<f64>,
}

/// Drop paragraphs scoring below the threshold against the image.
pub fn clipscore_paragraph_filter(
    rewritten: &str,
    image_uri: &str,
    scorer: &ScorerHandle,
    threshold: f64,
) -> Result<ParagraphOutcome, ScorerError> {
    scorer.expect_kind(ScorerKind::Clipscore)?;
    let paragraphs = split_paragraphs(rewritten);
    let mut kept = Vec::new();
    let mut scores = Vec::with_capacity(paragraphs.len());
    for p in paragraphs {
        let s = scorer.clipscore(&p, image_uri)?;
        scores.push(s);
        if s >= threshold {
            kept.push(p);
        }
    }
    let text = if kept.is_empty() {
        None
    } else {
        Some(kept.join("\n\n"))
    };
    Ok(ParagraphOutcome { text, scores })
}

/// Keep unless the rewritten answer contradicts the original one. Both answers
/// are phrased as statements about the question; the original is the premise.
pub fn nli_contradiction_filter(
    original_answer: &str,
    rewritten: &str,
    question: &str,
    scorer: &ScorerHandle,
) -> Result<(bool, NliLabel), ScorerError> {
    scorer.expect_kind(ScorerKind::Nli)?;
    let label = scorer.nli(
        &answer_statement(original_answer, question),
        &answer_statement(rewritten, question),
    )?;
    Ok((label != NliLabel::Contradiction, label))
}

fn nli_score(label: NliLabel) -> f64 {
    match label {
        NliLabel::Entailment => 1.0,
        NliLabel::Neutral => 0.0,
        NliLabel::Contradiction => -1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_chars: usize,
    pub max_chars: usize,
    pub sts_threshold: f64,
    pub clipscore_threshold: f64,
    pub enabled: BTreeSet<FilterKind>,
    pub sts_categories: BTreeSet<Category>,
    pub clipscore_categories: BTreeSet<Category>,
    pub nli_categories: BTreeSet<Category>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_chars: DEFAULT_MIN_CHARS,
            max_chars: DEFAULT_MAX_CHARS,
            sts_threshold: DEFAULT_STS_THRESHOLD,
            clipscore_threshold: DEFAULT_CLIPSCORE_THRESHOLD,
            enabled: FilterKind::ALL.into_iter().collect(),
            sts_categories: [Category::Captioning].into_iter().collect(),
            clipscore_categories: [Category::Captioning].into_iter().collect(),
            nli_categories: [Category::VqaRationale, Category::VqaPlain].into_iter().collect(),
        }
    }
}

impl FilterConfig {
    pub fn check(&self) -> Result<(), FilterError> {
        if self.min_chars >= self.max_chars {
            return Err(FilterError::BadConfig(format!(
                "min_chars {} must be below max_chars {}",
                self.min_chars, self.max_chars
            )));
        }
        if !self.sts_threshold.is_finite() || !self.clipscore_threshold.is_finite() {
            return Err(FilterError::BadConfig("thresholds must be finite".into()));
        }
        Ok(())
    }
}

/// Scorers for the model-based filters. Only those the config enables are needed.
#[derive(Debug, Clone, Default)]
pub struct FilterScorers {
    pub sts: Option<ScorerHandle>,
    pub clipscore: Option<ScorerHandle>,
    pub nli: Option<ScorerHandle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub sample_id: String,
    pub kept: bool,
    pub rejected_by: Option<FilterKind>,
    /// One entry per filter that ran: `length` is the char count, `change` is 1
    /// when changed, `sts` the similarity, `clipscore` the best paragraph score,
    /// `nli` is 1/0/-1 for entailment/neutral/contradiction.
    pub scores: BTreeMap<FilterKind, f64>,
    pub surviving_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total_in: usize,
    pub total_kept: usize,
    pub per_filter_rejections: BTreeMap<FilterKind, usize>,
    pub keep_rate: f64,
}

impl FilterReport {
    pub fn from_verdicts<'a>(verdicts: impl IntoIterator<Item = &'a FilterVerdict>) -> Self {
        let mut report = FilterReport {
            total_in: 0,
            total_kept: 0,
            per_filter_rejections: FilterKind::ALL.iter().map(|&k| (k, 0)).collect(),
            keep_rate: 0.0,
        };
        for v in verdicts {
            report.absorb(v);
        }
        report.finish();
        report
    }

    fn absorb(&mut self, v: &FilterVerdict) {
        self.total_in += 1;
        match v.rejected_by {
            None => self.total_kept += 1,
            Some(k) => *self.per_filter_rejections.entry(k).or_insert(0) += 1,
        }
    }

    fn finish(&mut self) {
        self.keep_rate = if self.total_in == 0 {
            0.0
        } else {
            self.total_kept as f64 / self.total_in as f64
        };
    }

    pub fn total_rejected(&self) -> usize {
        self.per_filter_rejections.values().sum()
    }
}

pub struct FilterPipeline {
    config: FilterConfig,
    scorers: FilterScorers,
}

impl FilterPipeline {
    pub fn new(config: FilterConfig, scorers: FilterScorers) -> Result<Self, FilterError> {
        config.check()?;
        let needs = [
            (FilterKind::Sts, ScorerKind::Sts, &scorers.sts),
            (FilterKind::Clipscore, ScorerKind::Clipscore, &scorers.clipscore),
            (FilterKind::Nli, ScorerKind::Nli, &scorers.nli),
        ];
        for (filter, kind, handle) in needs {
            if !config.enabled.contains(&filter) {
                continue;
            }
            match handle {
                None => {
                    return Err(FilterError::BadConfig(format!(
                        "{filter} filter enabled but no {kind} scorer provided"
                    )))
                }
                Some(h) if h.kind() != kind => {
                    return Err(FilterError::BadConfig(format!(
                        "{filter} filter given a {} scorer",
                        h.kind()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(FilterPipeline { config, scorers })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    fn on(&self, kind: FilterKind) -> bool {
        self.config.enabled.contains(&kind)
    }

    /// Verdict for one sample. Depends only on the sample, config and scorers.
    pub fn evaluate(&self, sample: &InstructionSample) -> Result<FilterVerdict, FilterError> {
        let cfg = &self.config;
        let scorer_err = |source| FilterError::Scorer {
            sample_id: sample.id.clone(),
            source,
        };
        let mut scores = BTreeMap::new();
        let mut response = sample.response.clone();
        let verdict = |rejected_by: Option<FilterKind>, scores, surviving_response| FilterVerdict {
            sample_id: sample.id.clone(),
            kept: rejected_by.is_none(),
            rejected_by,
            scores,
            surviving_response,
        };

        if self.on(FilterKind::Length) {
            scores.insert(FilterKind::Length, response.chars().count() as f64);
            if !length_filter(&response, cfg.min_chars, cfg.max_chars)? {
                return Ok(verdict(Some(FilterKind::Length), scores, response));
            }
        }
        let raw = sample.raw_annotation.as_deref();
        if self.on(FilterKind::Change) {
            let raw = raw.ok_or_else(|| FilterError::MissingRawAnnotation(sample.id.clone()))?;
            let changed = change_filter(raw, &response);
            scores.insert(FilterKind::Change, if changed { 1.0 } else { 0.0 });
            if !changed {
                return Ok(verdict(Some(FilterKind::Change), scores, response));
            }
        }
        if self.on(FilterKind::Sts) && cfg.sts_categories.contains(&sample.category) {
            let raw = raw.ok_or_else(|| FilterError::MissingRawAnnotation(sample.id.clone()))?;
            let handle = self.scorers.sts.as_ref().expect("checked in new");
            let (keep, score) = sts_filter(raw, &response, handle, cfg.sts_threshold).map_err(scorer_err)?;
            scores.insert(FilterKind::Sts, score);
            if !keep {
                return Ok(verdict(Some(FilterKind::Sts), scores, response));
            }
        }
        if self.on(FilterKind::Clipscore) && cfg.clipscore_categories.contains(&sample.category) {
            let image = sample
                .images
                .first()
                .ok_or_else(|| FilterError::MissingImage(sample.id.clone()))?;
            let handle = self.scorers.clipscore.as_ref().expect("checked in new");
            let outcome = clipscore_paragraph_filter(&response, &image.uri, handle, cfg.clipscore_threshold)
                .map_err(scorer_err)?;
            let best = outcome.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            scores.insert(FilterKind::Clipscore, best);
            match outcome.text {
                Some(text) => response = text,
                None => return Ok(verdict(Some(FilterKind::Clipscore), scores, String::new())),
            }
        }
        if self.on(FilterKind::Nli) && cfg.nli_categories.contains(&sample.category) {
            let raw = raw.ok_or_else(|| FilterError::MissingRawAnnotation(sample.id.clone()))?;
            let handle = self.scorers.nli.as_ref().expect("checked in new");
            let (keep, label) =
                nli_contradiction_filter(raw, &response, &sample.instruction, handle).map_err(scorer_err)?;
            scores.insert(FilterKind::Nli, nli_score(label));
            if !keep {
                return Ok(verdict(Some(FilterKind::Nli), scores, response));
            }
        }
        Ok(verdict(None, scores, response))
    }

    /// Filter a corpus. Samples are scored in parallel in chunks; verdicts reach
    /// `sink` in input order. Kept samples carry their pruned response.
    pub fn run<E>(
        &self,
        corpus: Vec<InstructionSample>,
        mut sink: impl FnMut(&FilterVerdict) -> Result<(), E>,
    ) -> Result<FilterOutcome, FilterRunError<E>> {
        const CHUNK: usize = 1024;
        let mut kept = Vec::new();
        let mut report = FilterReport::from_verdicts([]);
        let mut samples = corpus.into_iter().peekable();
        while samples.peek().is_some() {
            let chunk: Vec<InstructionSample> = samples.by_ref().take(CHUNK).collect();
            let verdicts: Vec<FilterVerdict> = chunk
                .par_iter()
                .map(|s| self.evaluate(s))
                .collect::<Result<_, _>>()
                .map_err(FilterRunError::Filter)?;
            for (mut sample, verdict) in chunk.into_iter().zip(verdicts) {
                sink(&verdict).map_err(FilterRunError::Sink)?;
                report.absorb(&verdict);
                if verdict.kept {
                    sample.response = verdict.surviving_response;
                    kept.push(sample);
                }
            }
        }
        report.finish();
        Ok(FilterOutcome { kept, report })
    }

    /// [`run`](Self::run) without a sidecar, returning the verdicts as well.
    pub fn run_collect(
        &self,
        corpus: Vec<InstructionSample>,
    ) -> Result<(FilterOutcome, Vec<FilterVerdict>), FilterError> {
        let mut verdicts = Vec::new();
        let outcome = self
            .run(corpus, |v| {
                verdicts.push(v.clone());
                Ok::<(), std::convert::Infallible>(())
            })
            .map_err(|e| match e {
                FilterRunError::Filter(f) => f,
                FilterRunError::Sink(never) => match never {},
            })?;
        Ok((outcome, verdicts))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<InstructionSample>,
    pub report: FilterReport,
}

#[derive(Debug, thiserror::Error)]
pub enum FilterRunError<E> {
    #[error(transparent)]
    Filter(FilterError),
    #[error("verdict sink failed: {0}")]
    Sink(E),
}
