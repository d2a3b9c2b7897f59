//! Response distortion and rewriter training-set assembly.
//!
//! A rewriter learns to map low-quality responses back to high-quality ones. The
//! low-quality side is produced here from high-quality responses by three
//! strategies: an LLM asked to degrade its own answer ([`prompt`]), random text
//! augmentation ([`augment`]), and raw captions plus boxes standing in for a
//! detailed description ([`caption`]).

pub mod augment;
pub mod caption;
pub mod commands;
pub mod prompt;

use std::collections::HashSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::InstructionSample;
use crate::rng::{record_rng, rng_from_seed, derive_seed};
pub use augment::random_text_augment;
pub use caption::{caption_bbox_distortion, LabeledBox};
pub use commands::CommandPool;
pub use prompt::build_llm_distortion_prompt;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DistortionError {
    #[error("sample {0:?} has an empty response")]
    EmptyResponse(String),
    #[error("no captions and no boxes to build from")]
    EmptyInput,
    #[error("source {source_name:?} has {available} usable samples, {requested} requested")]
    InsufficientSource {
        source_name: String,
        requested: usize,
        available: usize,
    },
    #[error("caption source {id:?}: {reason}")]
    BadCaptionSource { id: String, reason: String },
    #[error("record {0:?}: distorted text is empty or equals the original")]
    UnchangedDistortion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LlmInstructed,
    TextAugment,
    CaptionBbox,
}

impl Strategy {
    fn stream(self) -> &'static str {
        match self {
            Strategy::LlmInstructed => "distort/llm",
            Strategy::TextAugment => "distort/augment",
            Strategy::CaptionBbox => "distort/caption",
        }
    }
}

/// One (original, distorted) pair for rewriter training.
///
/// LLM-instructed records carry the prompt and leave `distorted_response` empty
/// until a completion is attached with [`DistortionRecord::attach_completion`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistortionRecord {
    pub sample_id: String,
    pub strategy: Strategy,
    pub original_response: String,
    pub distorted_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_index: Option<usize>,
    pub rng_seed: u64,
}

impl DistortionRecord {
    pub fn is_pending(&self) -> bool {
        self.distorted_response.is_none()
    }

    /// Fill a pending LLM-instructed record from the raw model completion.
    pub fn attach_completion(&mut self, completion: &str) -> Result<(), DistortionError> {
        let text = prompt::extract_quoted_completion(completion);
        if text.is_empty() || text == self.original_response.trim() {
            return Err(DistortionError::UnchangedDistortion(self.sample_id.clone()));
        }
        self.distorted_response = Some(text.to_string());
        Ok(())
    }
}

/// A detailed description together with the raw captions and boxes behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionSource {
    pub sample: InstructionSample,
    pub captions: Vec<String>,
    pub boxes: Vec<LabeledBox>,
}

impl CaptionSource {
    /// Read captions and boxes from the sample's `captions` and `boxes` metadata
    /// entries (JSON-encoded string list and `{label, bbox}` list).
    pub fn from_sample(sample: InstructionSample) -> Result<Self, DistortionError> {
        let bad = |reason: String| DistortionError::BadCaptionSource {
            id: sample.id.clone(),
            reason,
        };
        let captions: Vec<String> = match sample.metadata.get("captions") {
            Some(text) => serde_json::from_str(text).map_err(|e| bad(format!("captions: {e}")))?,
            None => Vec::new(),
        };
        let boxes: Vec<LabeledBox> = match sample.metadata.get("boxes") {
            Some(text) => serde_json::from_str(text).map_err(|e| bad(format!("boxes: {e}")))?,
            None => Vec::new(),
        };
        if captions.is_empty() && boxes.is_empty() {
            return Err(bad("no captions or boxes in metadata".into()));
        }
        if sample.images.is_empty() {
            return Err(bad("no image to normalize boxes against".into()));
        }
        Ok(CaptionSource {
            sample,
            captions,
            boxes,
        })
    }
}

/// Target counts per strategy and source. `scale` multiplies all four.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub llm_multimodal: usize,
    pub llm_text: usize,
    pub text_augment: usize,
    pub caption_bbox: usize,
    pub scale: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            llm_multimodal: 133_000,
            llm_text: 76_000,
            text_augment: 77_000,
            caption_bbox: 14_000,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixCounts {
    pub llm_multimodal: usize,
    pub llm_text: usize,
    pub text_augment: usize,
    pub caption_bbox: usize,
}

impl MixCounts {
    pub fn total(&self) -> usize {
        self.llm_multimodal + self.llm_text + self.text_augment + self.caption_bbox
    }
}

impl MixConfig {
    pub fn counts(&self) -> MixCounts {
        let s = |n: usize| (n as f64 * self.scale).round() as usize;
        MixCounts {
            llm_multimodal: s(self.llm_multimodal),
            llm_text: s(self.llm_text),
            text_augment: s(self.text_augment),
            caption_bbox: s(self.caption_bbox),
        }
    }
}

/// Pick `n` distinct positions of `0..len`, returned in ascending order.
fn pick(len: usize, n: usize, seed: u64, stream: &str, source: &str) -> Result<Vec<usize>, DistortionError> {
    if n > len {
        return Err(DistortionError::InsufficientSource {
            source_name: source.to_string(),
            requested: n,
            available: len,
        });
    }
    let mut rng = rng_from_seed(derive_seed(seed, stream, source));
    let mut idx = index::sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn llm_record(
    sample: &InstructionSample,
    pool: &CommandPool,
    seed: u64,
) -> Result<DistortionRecord, DistortionError> {
    let (rng_seed, mut rng) = record_rng(seed, Strategy::LlmInstructed.stream(), &sample.id);
    let (prompt, command_index) = build_llm_distortion_prompt(sample, pool, &mut rng)?;
    Ok(DistortionRecord {
        sample_id: sample.id.clone(),
        strategy: Strategy::LlmInstructed,
        original_response: sample.response.clone(),
        distorted_response: None,
        distortion_prompt: Some(prompt),
        command_index,
        rng_seed,
    })
}

/// Augmentation redraws (continuing the same generator) until the text changes;
/// after that many identity draws, a single character edit is forced.
const AUGMENT_ATTEMPTS: usize = 16;

pub fn augment_record(sample: &InstructionSample, seed: u64) -> Result<DistortionRecord, DistortionError> {
    if sample.response.trim().is_empty() {
        return Err(DistortionError::EmptyResponse(sample.id.clone()));
    }
    let (rng_seed, mut rng) = record_rng(seed, Strategy::TextAugment.stream(), &sample.id);
    let original = &sample.response;
    let mut distorted = None;
    for _ in 0..AUGMENT_ATTEMPTS {
        let out = random_text_augment(original, &mut rng);
        if out != *original {
            distorted = Some(out);
            break;
        }
    }
    let distorted = match distorted {
        Some(d) => d,
        None => augment::char_augment(original, augment::CharOp::Insert, &mut rng),
    };
    Ok(DistortionRecord {
        sample_id: sample.id.clone(),
        strategy: Strategy::TextAugment,
        original_response: original.clone(),
        distorted_response: Some(distorted),
        distortion_prompt: None,
        command_index: None,
        rng_seed,
    })
}

pub fn caption_record(source: &CaptionSource, seed: u64) -> Result<DistortionRecord, DistortionError> {
    let image = &source.sample.images[0];
    let distorted =
        caption_bbox_distortion(&source.captions, &source.boxes, image.width_px, image.height_px)?;
    if distorted.trim() == source.sample.response.trim() {
        return Err(DistortionError::UnchangedDistortion(source.sample.id.clone()));
    }
    Ok(DistortionRecord {
        sample_id: source.sample.id.clone(),
        strategy: Strategy::CaptionBbox,
        original_response: source.sample.response.clone(),
        distorted_response: Some(distorted),
        distortion_prompt: None,
        command_index: None,
        rng_seed: derive_seed(seed, Strategy::CaptionBbox.stream(), &source.sample.id),
    })
}

/// Build the rewriter training set.
///
/// LLM-instructed records are drawn from the multimodal and text corpora,
/// augmentation records from both corpora together, and caption/box records from
/// `caption_corpus` excluding every sample already chosen for LLM distortion.
/// Output order: LLM multimodal, LLM text, augmentation, caption/box; each group
/// in source order.
pub fn assemble_rewriter_training_set(
    multimodal_corpus: &[InstructionSample],
    text_corpus: &[InstructionSample],
    caption_corpus: &[CaptionSource],
    mix: &MixConfig,
    pool: &CommandPool,
    seed: u64,
) -> Result<Vec<DistortionRecord>, DistortionError> {
    let counts = mix.counts();
    let mut records = Vec::with_capacity(counts.total());

    let mm_idx = pick(multimodal_corpus.len(), counts.llm_multimodal, seed, "assemble", "multimodal")?;
    let text_idx = pick(text_corpus.len(), counts.llm_text, seed, "assemble", "text")?;
    let augment_pool: Vec<&InstructionSample> =
        multimodal_corpus.iter().chain(text_corpus).collect();
    let aug_idx = pick(augment_pool.len(), counts.text_augment, seed, "assemble", "augment")?;

    let llm_ids: HashSet<&str> = mm_idx
        .iter()
        .map(|&i| multimodal_corpus[i].id.as_str())
        .chain(text_idx.iter().map(|&i| text_corpus[i].id.as_str()))
        .collect();
    let caption_pool: Vec<&CaptionSource> = caption_corpus
        .iter()
        .filter(|c| !llm_ids.contains(c.sample.id.as_str()))
        .collect();
    let cap_idx = pick(caption_pool.len(), counts.caption_bbox, seed, "assemble", "caption")?;

    for &i in &mm_idx {
        records.push(llm_record(&multimodal_corpus[i], pool, seed)?);
    }
    for &i in &text_idx {
        records.push(llm_record(&text_corpus[i], pool, seed)?);
    }
    for &i in &aug_idx {
        records.push(augment_record(augment_pool[i], seed)?);
    }
    for &i in &cap_idx {
        records.push(caption_record(caption_pool[i], seed)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, ImageRef};

    fn sample(id: &str, category: Category) -> InstructionSample {
        let images = if category == Category::TextOnly {
            vec![]
        } else {
            vec![ImageRef::new(format!("{id}.jpg"), 100, 200)]
        };
        InstructionSample {
            id: id.into(),
            source_dataset: "test".into(),
            category,
            instruction: format!("Tell me about {id}."),
            response: format!("This is a long and detailed answer about {id}. It has two sentences."),
            raw_annotation: None,
            images,
            metadata: Default::default(),
        }
    }

    fn caption_source(id: &str) -> CaptionSource {
        CaptionSource {
            sample: sample(id, Category::Captioning),
            captions: vec![format!("a photo of {id}")],
            boxes: vec![LabeledBox::new("person", [0.0, 0.0, 50.0, 100.0])],
        }
    }

    fn corpora(n_mm: usize, n_text: usize, n_cap: usize) -> (Vec<InstructionSample>, Vec<InstructionSample>, Vec<CaptionSource>) {
        let mm = (0..n_mm).map(|i| sample(&format!("mm{i}"), Category::Captioning)).collect();
        let text = (0..n_text).map(|i| sample(&format!("tx{i}"), Category::TextOnly)).collect();
        // caption sources share ids with the multimodal corpus, like detailed descriptions do
        let caps = (0..n_cap).map(|i| caption_source(&format!("mm{i}"))).collect();
        (mm, text, caps)
    }

    #[test]
    fn scaled_mix_counts() {
        let mix = MixConfig {
            scale: 1.0 / 1000.0,
            ..Default::default()
        };
        let c = mix.counts();
        assert_eq!(
            (c.llm_multimodal, c.llm_text, c.text_augment, c.caption_bbox),
            (133, 76, 77, 14)
        );
        assert_eq!(c.total(), 300);
        assert_eq!(MixConfig::default().counts().total(), 300_000);
    }

    #[test]
    fn assembled_set_matches_mix_and_is_disjoint() {
        let (mm, text, caps) = corpora(300, 150, 200);
        let mix = MixConfig {
            scale: 1.0 / 1000.0,
            ..Default::default()
        };
        let pool = CommandPool::shipped();
        let records = assemble_rewriter_training_set(&mm, &text, &caps, &mix, &pool, 11).unwrap();
        assert_eq!(records.len(), 300);
        let count = |s: Strategy| records.iter().filter(|r| r.strategy == s).count();
        assert_eq!(count(Strategy::LlmInstructed), 209);
        assert_eq!(count(Strategy::TextAugment), 77);
        assert_eq!(count(Strategy::CaptionBbox), 14);

        let llm: HashSet<&str> = records
            .iter()
            .filter(|r| r.strategy == Strategy::LlmInstructed)
            .map(|r| r.sample_id.as_str())
            .collect();
        assert!(records
            .iter()
            .filter(|r| r.strategy == Strategy::CaptionBbox)
            .all(|r| !llm.contains(r.sample_id.as_str())));

        for r in &records {
            match r.strategy {
                Strategy::LlmInstructed => {
                    assert!(r.distortion_prompt.is_some());
                    assert!(r.is_pending());
                }
                _ => {
                    assert!(r.command_index.is_none());
                    assert_ne!(r.distorted_response.as_deref(), Some(r.original_response.as_str()));
                }
            }
        }
    }

    #[test]
    fn insufficient_source_names_the_source() {
        let (mm, text, caps) = corpora(300, 100, 10);
        let mix = MixConfig {
            llm_multimodal: 0,
            llm_text: 200,
            text_augment: 0,
            caption_bbox: 0,
            scale: 1.0,
        };
        let err = assemble_rewriter_training_set(&mm, &text, &caps, &mix, &CommandPool::shipped(), 1)
            .unwrap_err();
        assert_eq!(
            err,
            DistortionError::InsufficientSource {
                source_name: "text".into(),
                requested: 200,
                available: 100
            }
        );
    }

    #[test]
    fn caption_pool_shrinks_by_llm_overlap() {
        let (mm, text, caps) = corpora(20, 0, 20);
        let mix = MixConfig {
            llm_multimodal: 15,
            llm_text: 0,
            text_augment: 0,
            caption_bbox: 6,
            scale: 1.0,
        };
        let err = assemble_rewriter_training_set(&mm, &text, &caps, &mix, &CommandPool::shipped(), 1)
            .unwrap_err();
        assert!(matches!(
            err,
            DistortionError::InsufficientSource { available: 5, .. }
        ));
    }

    #[test]
    fn deterministic_and_order_independent() {
        let (mm, text, caps) = corpora(60, 40, 30);
        let mix = MixConfig {
            llm_multimodal: 10,
            llm_text: 10,
            text_augment: 10,
            caption_bbox: 5,
            scale: 1.0,
        };
        let pool = CommandPool::shipped();
        let a = assemble_rewriter_training_set(&mm, &text, &caps, &mix, &pool, 5).unwrap();
        let b = assemble_rewriter_training_set(&mm, &text, &caps, &mix, &pool, 5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

        // per-record output only depends on (seed, sample id)
        let s = &mm[3];
        assert_eq!(llm_record(s, &pool, 5).unwrap(), llm_record(&s.clone(), &pool, 5).unwrap());
        assert_ne!(llm_record(s, &pool, 5).unwrap().rng_seed, llm_record(s, &pool, 6).unwrap().rng_seed);
    }

    #[test]
    fn attach_completion() {
        let mut r = llm_record(&sample("a", Category::TextOnly), &CommandPool::shipped(), 1).unwrap();
        r.attach_completion("answer about a\" and then more").unwrap();
        assert_eq!(r.distorted_response.as_deref(), Some("answer about a"));
        let mut r2 = r.clone();
        r2.distorted_response = None;
        let original = r2.original_response.clone();
        assert!(r2.attach_completion(&format!("{original}\"")).is_err());
        assert!(r2.attach_completion("\"").is_err());
    }

    #[test]
    fn caption_source_from_metadata() {
        let mut s = sample("c", Category::Captioning);
        s.metadata.insert("captions".into(), r#"["a cat", "a kitten"]"#.into());
        s.metadata.insert("boxes".into(), r#"[{"label": "cat", "bbox": [0, 0, 10, 20]}]"#.into());
        let src = CaptionSource::from_sample(s).unwrap();
        assert_eq!(src.captions.len(), 2);
        assert_eq!(src.boxes[0].label, "cat");
        let r = caption_record(&src, 0).unwrap();
        assert!(r.distorted_response.unwrap().ends_with("cat: [0.000, 0.000, 0.100, 0.100]"));

        let bare = sample("d", Category::Captioning);
        assert!(CaptionSource::from_sample(bare).is_err());
    }
}
