//! Curation, filtering, packing and evaluation for visual instruction-tuning data.
//!
//! The crate covers the data side of instruction tuning: unifying source datasets
//! into one sample schema, building rewriter training data by distorting good
//! responses, driving a rewrite endpoint, filtering rewritten samples with rule-
//! and model-based checks, packing samples into multi-turn training sequences,
//! emitting the staged tuning plan, and scoring model outputs. Neural models
//! (rewriter, scorers) live behind HTTP interfaces; nothing here trains.

pub mod corpus;
pub mod distortion;
pub mod eval;
pub mod filters;
pub mod gateway;
pub mod jsonl;
pub mod packing;
pub mod rng;
pub mod scoring;
pub mod tuning_plan;
