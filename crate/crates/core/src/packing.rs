//! Multi-turn packing: random samples are concatenated into fixed-size token
//! sequences, each turn masked so that only responses (and their end-of-sequence
//! token) carry loss.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::InstructionSample;
use crate::distortion::prompt::{ASSISTANT_MARKER, HUMAN_MARKER, SYSTEM_MESSAGE};
use crate::rng::{derive_seed, rng_from_seed};
use PackError::MarkerNotFound;

pub const IMAGE_TOKEN: &str = "<image>";
pub const EOS_TOKEN: &str = "<EOS>";
pub const PAD_TOKEN: &str = "<PAD>";

/// Text-to-token capability needed for packing. `encode` must be deterministic
/// and the marker sequences must not appear inside encoded free text.
pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    fn encode(&self, text: &str) -> Vec<u32>;
    fn human_marker(&self) -> &[u32];
    fn assistant_marker(&self) -> &[u32];
    fn image_token(&self) -> u32;
    fn eos(&self) -> u32;
    fn pad(&self) -> u32;
}

/// Whitespace tokenizer with hashed word ids. Marker strings and special
/// tokens are recognised literally, even without surrounding spaces.
#[derive(Debug, Clone, Default)]
pub struct WhitespaceTokenizer;

impl WhitespaceTokenizer {
    pub const PAD: u32 = 0;
    pub const EOS: u32 = 1;
    pub const HUMAN: u32 = 2;
    pub const ASSISTANT: u32 = 3;
    pub const IMAGE: u32 = 4;
    /// Word ids start here; everything below is reserved.
    pub const FIRST_WORD_ID: u32 = 16;

    const SPECIALS: [(&'static str, u32); 5] = [
        (HUMAN_MARKER, Self::HUMAN),
        (ASSISTANT_MARKER, Self::ASSISTANT),
        (IMAGE_TOKEN, Self::IMAGE),
        (EOS_TOKEN, Self::EOS),
        (PAD_TOKEN, Self::PAD),
    ];

    fn word_id(word: &str) -> u32 {
        // FNV-1a, folded into the non-reserved range
        let mut h: u32 = 0x811c_9dc5;
        for b in word.bytes() {
            h ^= b as u32;
            h = h.wrapping_mul(0x0100_0193);
        }
        Self::FIRST_WORD_ID + h % (u32::MAX - Self::FIRST_WORD_ID)
    }

    fn encode_words(text: &str, out: &mut Vec<u32>) {
        out.extend(text.split_whitespace().map(Self::word_id));
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn id(&self) -> &str {
        "whitespace-fnv1a"
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        let mut rest = text;
        loop {
            let next = Self::SPECIALS
                .iter()
                .filter_map(|&(s, id)| rest.find(s).map(|pos| (pos, s, id)))
                .min_by_key(|&(pos, s, _)| (pos, std::cmp::Reverse(s.len())));
            match next {
                Some((pos, s, id)) => {
                    Self::encode_words(&rest[..pos], &mut out);
                    out.push(id);
                    rest = &rest[pos + s.len()..];
                }
                None => {
                    Self::encode_words(rest, &mut out);
                    return out;
                }
            }
        }
    }

    fn human_marker(&self) -> &[u32] {
        &[Self::HUMAN]
    }

    fn assistant_marker(&self) -> &[u32] {
        &[Self::ASSISTANT]
    }

    fn image_token(&self) -> u32 {
        Self::IMAGE
    }

    fn eos(&self) -> u32 {
        Self::EOS
    }

    fn pad(&self) -> u32 {
        Self::PAD
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PackError {
    #[error("budget {budget} is below the {needed}-token mandatory prefix of sample {sample_id:?}")]
    BudgetTooSmall {
        sample_id: String,
        budget: usize,
        needed: usize,
    },
    #[error("sample {sample_id:?} has {images} images, above the cap of {max_images}")]
    TooManyImages {
        sample_id: String,
        images: usize,
        max_images: usize,
    },
    #[error("malformed sequence: {0}")]
    MarkerNotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackConfig {
    pub budget: usize,
    pub max_images: usize,
    /// How many upcoming unused samples are tried when filling a sequence.
    pub lookahead: usize,
}

impl Default for PackConfig {
    fn default() -> Self {
        PackConfig {
            budget: 1024,
            max_images: 10,
            lookahead: 16,
        }
    }
}

/// Half-open token ranges of one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSpan {
    pub sample_id: String,
    /// Human marker through assistant marker.
    pub instruction_span: [usize; 2],
    /// Response tokens plus the end-of-sequence token.
    pub response_span: [usize; 2],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSlot {
    pub sample_id: String,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub turns: Vec<TurnSpan>,
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
    pub image_slots: Vec<ImageSlot>,
    pub budget: usize,
}

impl PackedSequence {
    pub fn image_count(&self) -> usize {
        self.image_slots.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackManifest {
    pub budget: usize,
    pub max_images: usize,
    pub lookahead: usize,
    pub seed: u64,
    pub tokenizer: String,
    pub sequences: usize,
    pub samples: usize,
}

/// Mask bit per token: 1 from just after each assistant marker through the
/// end-of-sequence token that closes that response, 0 elsewhere.
pub fn loss_mask(token_ids: &[u32], tokenizer: &dyn Tokenizer) -> Result<Vec<u8>, PackError> {
    let marker = tokenizer.assistant_marker();
    let eos = tokenizer.eos();
    let pad = tokenizer.pad();
    let mut mask = vec![0u8; token_ids.len()];
    let mut i = 0;
    let mut turns = 0;
    while i < token_ids.len() {
        if token_ids[i..].starts_with(marker) {
            i += marker.len();
            let start = i;
            let end = token_ids[start..]
                .iter()
                .position(|&t| t == eos)
                .map(|p| start + p)
                .ok_or_else(|| {
                    MarkerNotFound(format!("response starting at token {start} has no end-of-sequence token"))
                })?;
            mask[start..=end].fill(1);
            turns += 1;
            i = end + 1;
        } else if token_ids[i] == eos {
            return Err(MarkerNotFound(format!(
                "end-of-sequence token at {i} does not close a response"
            )));
        } else {
            i += 1;
        }
    }
    if turns == 0 && token_ids.iter().any(|&t| t != pad) {
        return Err(MarkerNotFound("no assistant marker".into()));
    }
    Ok(mask)
}

/// One sample's turn, pre-tokenized without the system preamble.
#[derive(Debug, Clone)]
struct EncodedTurn {
    sample: usize,
    /// marker + image tokens + instruction + marker
    prefix: Vec<u32>,
    response: Vec<u32>,
    images: usize,
}

impl EncodedTurn {
    fn len(&self) -> usize {
        self.prefix.len() + self.response.len() + 1
    }
}

fn encode_turn(idx: usize, sample: &InstructionSample, tok: &dyn Tokenizer) -> EncodedTurn {
    let mut prefix = tok.human_marker().to_vec();
    prefix.extend(std::iter::repeat(tok.image_token()).take(sample.images.len()));
    prefix.extend(tok.encode(&sample.instruction));
    prefix.extend_from_slice(tok.assistant_marker());
    EncodedTurn {
        sample: idx,
        prefix,
        response: tok.encode(&sample.response),
        images: sample.images.len(),
    }
}

/// Streams packed sequences. Every sample seeds or joins exactly one sequence.
pub struct Packer<'a> {
    corpus: &'a [InstructionSample],
    tokenizer: &'a dyn Tokenizer,
    config: PackConfig,
    system: Vec<u32>,
    turns: Vec<EncodedTurn>,
    queue: VecDeque<usize>,
}

impl<'a> Packer<'a> {
    pub fn new(
        corpus: &'a [InstructionSample],
        config: PackConfig,
        tokenizer: &'a dyn Tokenizer,
        seed: u64,
    ) -> Result<Self, PackError> {
        let system = tokenizer.encode(SYSTEM_MESSAGE);
        let turns: Vec<EncodedTurn> = corpus
            .iter()
            .enumerate()
            .map(|(i, s)| encode_turn(i, s, tokenizer))
            .collect();
        for t in &turns {
            let sample = &corpus[t.sample];
            if t.images > config.max_images {
                return Err(PackError::TooManyImages {
                    sample_id: sample.id.clone(),
                    images: t.images,
                    max_images: config.max_images,
                });
            }
            let needed = system.len() + t.prefix.len() + 1;
            if needed > config.budget {
                return Err(PackError::BudgetTooSmall {
                    sample_id: sample.id.clone(),
                    budget: config.budget,
                    needed,
                });
            }
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(seed, "pack", "order")));
        Ok(Packer {
            corpus,
            tokenizer,
            config,
            system,
            turns,
            queue: order.into(),
        })
    }

    fn build(&self, members: &[usize]) -> PackedSequence {
        let budget = self.config.budget;
        let mut ids = self.system.clone();
        let mut spans = Vec::with_capacity(members.len());
        let mut slots = Vec::new();
        for &m in members {
            let t = &self.turns[m];
            let sample = &self.corpus[t.sample];
            let start = ids.len();
            ids.extend_from_slice(&t.prefix);
            let resp_start = ids.len();
            // only a lone seed can overflow; its response tail gives way
            let room = budget - resp_start - 1;
            let truncated = t.response.len() > room;
            ids.extend_from_slice(&t.response[..t.response.len().min(room)]);
            ids.push(self.tokenizer.eos());
            spans.push(TurnSpan {
                sample_id: sample.id.clone(),
                instruction_span: [start, resp_start],
                response_span: [resp_start, ids.len()],
                truncated,
            });
            slots.extend(sample.images.iter().map(|img| ImageSlot {
                sample_id: sample.id.clone(),
                uri: img.uri.clone(),
            }));
        }
        let mut mask = vec![0u8; ids.len()];
        for s in &spans {
            mask[s.response_span[0]..s.response_span[1]].fill(1);
        }
        ids.resize(budget, self.tokenizer.pad());
        mask.resize(budget, 0);
        PackedSequence {
            turns: spans,
            token_ids: ids,
            loss_mask: mask,
            image_slots: slots,
            budget,
        }
    }
}

impl Iterator for Packer<'_> {
    type Item = PackedSequence;

    fn next(&mut self) -> Option<PackedSequence> {
        let seed = self.queue.pop_front()?;
        let mut members = vec![seed];
        let mut used = self.system.len() + self.turns[seed].len();
        let mut images = self.turns[seed].images;
        let mut pos = 0;
        let mut tried = 0;
        while pos < self.queue.len() && tried < self.config.lookahead && used < self.config.budget {
            tried += 1;
            let c = &self.turns[self.queue[pos]];
            if used + c.len() <= self.config.budget && images + c.images <= self.config.max_images {
                used += c.len();
                images += c.images;
                members.push(self.queue.remove(pos).expect("in range"));
            } else {
                pos += 1;
            }
        }
        Some(self.build(&members))
    }
}

pub fn pack_multiturn(
    corpus: &[InstructionSample],
    config: PackConfig,
    tokenizer: &dyn Tokenizer,
    seed: u64,
) -> Result<Vec<PackedSequence>, PackError> {
    Ok(Packer::new(corpus, config, tokenizer, seed)?.collect())
}
