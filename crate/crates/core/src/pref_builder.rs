//! DPO-style preference pairs built from a warm-up SFT model's sampled
//! responses.
//!
//! The Idk dataset is split 50/50: one half trains the warm-up SFT model
//! externally, the other half is answered by that model and turned into
//! pairs. For a question labeled IK the first correct sample is chosen and
//! the refusal template rejected; for an IDK question the template is chosen
//! and the first incorrect non-refusal sample rejected. Questions lacking
//! the needed response kind emit nothing and are counted in a skip report.

use crate::corpus::QaItem;
use crate::inference::SampledResponse;
use crate::judge::{judge_correct, judge_refusal, JudgeConfig};
use crate::labeler::{group_by_question, IdkExample, Label};
use crate::split;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Share of pairs held out into the preference validation file.
pub const PREF_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum PrefError {
    #[error("question `{0}` has no sampled responses")]
    NoSamples(String),
    #[error("no corpus entry for question `{0}`")]
    UnknownQuestion(String),
}

/// One preference row: `chosen` is preferred over `rejected` for `prompt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub question_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub source_label: Label,
}

/// Why a question emitted no pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// IK question whose samples contain no correct response.
    NoCorrectSample,
    /// IDK question whose samples contain no incorrect non-refusal response.
    NoIncorrectSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedQuestion {
    pub question_id: String,
    pub label: Label,
    pub reason: SkipReason,
}

/// Pairs plus the skip report; `pairs.len() + skips.len()` equals the number
/// of questions fed in.
#[derive(Debug, Clone)]
pub struct PairBuildOutput {
    pub pairs: Vec<PreferencePair>,
    pub skips: Vec<SkippedQuestion>,
}

/// Deterministic 50/50 partition of the Idk dataset into
/// `(warmup_half, pref_half)`; an odd row goes to the warmup half.
pub fn split_halves(examples: Vec<IdkExample>, seed: u64) -> (Vec<IdkExample>, Vec<IdkExample>) {
    split::seeded_fraction(examples, 0.5, seed)
}

/// Hold out a validation share of the pairs: `(train, validation)`.
pub fn split_validation(
    pairs: Vec<PreferencePair>,
    seed: u64,
) -> (Vec<PreferencePair>, Vec<PreferencePair>) {
    let (validation, train) = split::seeded_fraction(pairs, PREF_VALIDATION_FRACTION, seed);
    (train, validation)
}

/// Build one preference pair per usable question from `pref_half`, judging
/// `samples` (the warm-up SFT model's responses) against the corpus answers.
pub fn build_pairs(
    pref_half: &[IdkExample],
    samples: &[SampledResponse],
    corpus: &[QaItem],
    cfg: &JudgeConfig,
) -> Result<PairBuildOutput, PrefError> {
    let by_id: BTreeMap<&str, &QaItem> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let grouped = group_by_question(samples);

    let mut sorted: Vec<&IdkExample> = pref_half.iter().collect();
    sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let mut pairs = Vec::new();
    let mut skips = Vec::new();
    for example in sorted {
        let item = by_id
            .get(example.question_id.as_str())
            .ok_or_else(|| PrefError::UnknownQuestion(example.question_id.clone()))?;
        let mut set = grouped
            .get(&example.question_id)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| PrefError::NoSamples(example.question_id.clone()))?
            .clone();
        set.sort_by_key(|s| s.sample_index);

        let pair = match example.label {
            Label::Ik => set
                .iter()
                .find(|s| {
                    !judge_refusal(&s.response, cfg)
                        && judge_correct(&s.response, &item.answers, cfg)
                })
                .map(|s| PreferencePair {
                    question_id: example.question_id.clone(),
                    prompt: example.prompt.clone(),
                    chosen: s.response.clone(),
                    rejected: cfg.refusal_template.clone(),
                    source_label: Label::Ik,
                }),
            Label::Idk => set
                .iter()
                .find(|s| {
                    !judge_refusal(&s.response, cfg)
                        && !judge_correct(&s.response, &item.answers, cfg)
                })
                .map(|s| PreferencePair {
                    question_id: example.question_id.clone(),
                    prompt: example.prompt.clone(),
                    chosen: cfg.refusal_template.clone(),
                    rejected: s.response.clone(),
                    source_label: Label::Idk,
                }),
        };
        match pair {
            Some(pair) => {
                debug_assert_ne!(pair.chosen, pair.rejected);
                pairs.push(pair);
            }
            None => skips.push(SkippedQuestion {
                question_id: example.question_id.clone(),
                label: example.label,
                reason: match example.label {
                    Label::Ik => SkipReason::NoCorrectSample,
                    Label::Idk => SkipReason::NoIncorrectSample,
                },
            }),
        }
    }
    Ok(PairBuildOutput { pairs, skips })
}
