//! The three-stage U-shaped tuning plan and its stage data mixes.
//!
//! Stage 1 tunes the language adapter on instruction-heavy data with a long
//! context, stage 2 freezes it and tunes the visual connector on the whole
//! rewritten corpus with a short context, stage 3 repeats stage 1 at a tenth of
//! the learning rate. The plan is a declarative artifact for an external trainer.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{derive_seed, rng_from_seed};

pub const PF_CORPUS: &str = "pf_1m";
pub const TEXT_CORPUS: &str = "text_only";
pub const LLAVA_CORPUS: &str = "llava";
pub const STAGE1_PF_FRACTION: f64 = 0.10;
pub const STAGE3_LR_DIVISOR: f64 = 10.0;
pub const CONTEXT_BUDGETS: [usize; 2] = [196, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Module {
    Lora,
    Perceiver,
    Xattn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixShare {
    All,
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub corpus_id: String,
    pub share: MixShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    pub tunable_modules: BTreeSet<Module>,
    pub tunable_params: String,
    pub num_samples: usize,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub context_length: usize,
    pub max_images: usize,
    pub training_hours: f64,
    pub data_mix: Vec<MixEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub stages: Vec<StageConfig>,
    /// SHA-256 of the overrides the plan was emitted from.
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("invalid override: {0}")]
    InvalidOverride(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
}

/// Per-stage field overrides. Module sets are fixed by the plan's shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOverride {
    pub num_samples: Option<usize>,
    pub epochs: Option<u32>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub context_length: Option<usize>,
    pub max_images: Option<usize>,
}

/// Keyed by stage name (`stage1`, `stage2`, `stage3`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlanOverrides(pub BTreeMap<String, StageOverride>);

fn lora() -> BTreeSet<Module> {
    [Module::Lora].into_iter().collect()
}

fn connector() -> BTreeSet<Module> {
    [Module::Perceiver, Module::Xattn].into_iter().collect()
}

fn instruction_mix() -> Vec<MixEntry> {
    vec![
        MixEntry { corpus_id: TEXT_CORPUS.into(), share: MixShare::All },
        MixEntry { corpus_id: LLAVA_CORPUS.into(), share: MixShare::All },
        MixEntry { corpus_id: PF_CORPUS.into(), share: MixShare::Fraction(STAGE1_PF_FRACTION) },
    ]
}

fn default_stages() -> Vec<StageConfig> {
    vec![
        StageConfig {
            name: "stage1".into(),
            tunable_modules: lora(),
            tunable_params: "0.29B".into(),
            num_samples: 772_000,
            epochs: 1,
            learning_rate: 1e-4,
            batch_size: 256,
            context_length: 1024,
            max_images: 10,
            training_hours: 11.8,
            data_mix: instruction_mix(),
        },
        StageConfig {
            name: "stage2".into(),
            tunable_modules: connector(),
            tunable_params: "0.1B".into(),
            num_samples: 1_070_000,
            epochs: 3,
            learning_rate: 1e-4,
            batch_size: 1024,
            context_length: 196,
            max_images: 3,
            training_hours: 9.5,
            data_mix: vec![MixEntry { corpus_id: PF_CORPUS.into(), share: MixShare::All }],
        },
        StageConfig {
            name: "stage3".into(),
            tunable_modules: lora(),
            tunable_params: "0.29B".into(),
            num_samples: 772_000,
            epochs: 1,
            learning_rate: 1e-5,
            batch_size: 256,
            context_length: 1024,
            max_images: 10,
            training_hours: 11.5,
            data_mix: instruction_mix(),
        },
    ]
}

fn apply(stage: &mut StageConfig, o: &StageOverride) {
    if let Some(v) = o.num_samples {
        stage.num_samples = v;
    }
    if let Some(v) = o.epochs {
        stage.epochs = v;
    }
    if let Some(v) = o.learning_rate {
        stage.learning_rate = v;
    }
    if let Some(v) = o.batch_size {
        stage.batch_size = v;
    }
    if let Some(v) = o.context_length {
        stage.context_length = v;
    }
    if let Some(v) = o.max_images {
        stage.max_images = v;
    }
}

impl TrainingPlan {
    /// Structural checks every emitted plan satisfies.
    pub fn check(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::InvalidOverride(m));
        if self.stages.len() != 3 {
            return bad(format!("expected 3 stages, got {}", self.stages.len()));
        }
        for s in &self.stages {
            if s.epochs < 1 {
                return bad(format!("{}: epochs must be at least 1", s.name));
            }
            if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
                return bad(format!("{}: learning rate must be positive", s.name));
            }
            if !CONTEXT_BUDGETS.contains(&s.context_length) {
                return bad(format!(
                    "{}: context length {} not one of {CONTEXT_BUDGETS:?}",
                    s.name, s.context_length
                ));
            }
            if s.batch_size == 0 || s.num_samples == 0 {
                return bad(format!("{}: batch size and sample count must be positive", s.name));
            }
        }
        let [s1, s2, s3] = [&self.stages[0], &self.stages[1], &self.stages[2]];
        if s1.tunable_modules != lora() || s3.tunable_modules != lora() || s2.tunable_modules != connector() {
            return bad("module sets must be lora / perceiver+xattn / lora".into());
        }
        let want = s1.learning_rate / STAGE3_LR_DIVISOR;
        if (s3.learning_rate - want).abs() > 1e-12 * want {
            return bad(format!(
                "stage3 learning rate {} must be stage1's {} divided by {STAGE3_LR_DIVISOR}",
                s3.learning_rate, s1.learning_rate
            ));
        }
        Ok(())
    }

    pub fn stage(&self, name: &str) -> Option<&StageConfig> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// The default plan with overrides applied. A stage-1 learning rate override
/// carries over to stage 3 unless stage 3 sets its own.
pub fn emit_u_shaped_plan(overrides: &PlanOverrides) -> Result<TrainingPlan, PlanError> {
    let mut stages = default_stages();
    for name in overrides.0.keys() {
        if !stages.iter().any(|s| &s.name == name) {
            return Err(PlanError::InvalidOverride(format!("unknown stage {name:?}")));
        }
    }
    for stage in &mut stages {
        if let Some(o) = overrides.0.get(&stage.name) {
            apply(stage, o);
        }
    }
    let stage3_lr_set = overrides
        .0
        .get("stage3")
        .is_some_and(|o| o.learning_rate.is_some());
    if !stage3_lr_set {
        stages[2].learning_rate = stages[0].learning_rate / STAGE3_LR_DIVISOR;
    }
    let canonical = serde_json::to_vec(overrides).expect("overrides serialize");
    let plan = TrainingPlan {
        stages,
        provenance: hex::encode(Sha256::digest(&canonical)),
    };
    plan.check()?;
    Ok(plan)
}

/// Number of ids a fractional draw takes from `n`, rounding half up.
pub fn fraction_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction) + 0.5).floor() as usize
}

/// Stage-1 ids: a uniform 10% draw (without replacement) of the rewritten corpus
/// plus every text-only and LLaVA id. Drawn ids keep their corpus order.
pub fn stage1_mix(
    pf_ids: &[String],
    text_ids: &[String],
    llava_ids: &[String],
    seed: u64,
) -> Result<Vec<String>, PlanError> {
    if pf_ids.is_empty() {
        return Err(PlanError::EmptyCorpus(PF_CORPUS.into()));
    }
    let k = fraction_count(pf_ids.len(), STAGE1_PF_FRACTION);
    let mut rng = rng_from_seed(derive_seed(seed, "stage1_mix", PF_CORPUS));
    let mut picked = index::sample(&mut rng, pf_ids.len(), k).into_vec();
    picked.sort_unstable();
    let mut ids: Vec<String> = picked.into_iter().map(|i| pf_ids[i].clone()).collect();
    ids.extend_from_slice(text_ids);
    ids.extend_from_slice(llava_ids);
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMixes {
    pub stage1: Vec<String>,
    pub stage2: Vec<String>,
    /// Same list as stage 1.
    pub stage3: Vec<String>,
}

pub fn materialize_mixes(
    pf_ids: &[String],
    text_ids: &[String],
    llava_ids: &[String],
    seed: u64,
) -> Result<StageMixes, PlanError> {
    let stage1 = stage1_mix(pf_ids, text_ids, llava_ids, seed)?;
    Ok(StageMixes {
        stage2: pf_ids.to_vec(),
        stage3: stage1.clone(),
        stage1,
    })
}
