//! Toolkit for constructing model-specific "I don't know" (Idk) datasets from
//! sampled model responses, emitting alignment-ready SFT / preference / HIR
//! data files, and evaluating model responses into knowledge quadrants.
//!
//! The pipeline stages map onto the modules below:
//!
//! - [`corpus`] — QA corpus ingestion, prompt templates, deterministic splits
//! - [`inference`] — k-sample collection from a chat-completions endpoint or a
//!   seeded simulated model, with resume support
//! - [`judge`] — lexical correctness matching and refusal detection
//! - [`labeler`] — per-question confidence and Idk SFT dataset construction
//! - [`pref_builder`] — DPO-style preference pairs from SFT-model samples
//! - [`hir_builder`] — combined multi-threshold dataset with confidence-level
//!   instructions
//! - [`loss_math`] — scalar reference implementations of the training
//!   objectives (SFT, DPO, DPO+SFT, pairwise RM, PPO actor/critic)
//! - [`evaluator`] — knowledge-quadrant classification and truthfulness
//!   metrics
//! - [`bon`] — best-of-n selection against a reward source
//! - [`pipeline`] — config-driven multi-stage runs with a manifest

pub mod bon;
pub mod corpus;
pub mod evaluator;
pub mod hir_builder;
pub mod inference;
pub mod jsonl;
pub mod judge;
pub mod labeler;
pub mod loss_math;
pub mod pipeline;
pub mod pref_builder;
pub mod split;

pub use corpus::{QaItem, SplitSpec};
pub use judge::JudgeConfig;
pub use labeler::{ConfidenceRecord, IdkExample, Label};
