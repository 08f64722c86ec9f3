//! Per-question confidence from judged samples and Idk SFT dataset
//! construction at a given Ik threshold.
//!
//! Confidence is the accuracy rate over the k sampled responses. A question
//! is labeled IDK when its confidence falls strictly below the threshold and
//! IK otherwise; at threshold 1.0 a question is IK only if every sample is
//! correct, and the extended threshold 1.1 forces IDK everywhere (the
//! all-refusal dataset). Sampled refusals count as incorrect toward the
//! accuracy rate and are tallied separately.

use crate::corpus::QaItem;
use crate::inference::SampledResponse;
use crate::judge::{judge_correct, judge_refusal, JudgeConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Largest meaningful Ik threshold: labels every question IDK.
pub const MAX_IK_THRESHOLD: f64 = 1.1;

#[derive(Debug, thiserror::Error)]
pub enum LabelerError {
    #[error("question `{question_id}` has no samples")]
    EmptySampleSet { question_id: String },
    #[error("question `{question_id}` sample indices are not dense 0..{expected}: found {found:?}")]
    MissingSampleIndex {
        question_id: String,
        expected: u32,
        found: Vec<u32>,
    },
    #[error("sample set mixes question ids `{first}` and `{second}`")]
    MixedQuestionIds { first: String, second: String },
    #[error("ik threshold {0} outside (0, 1.1]")]
    InvalidThreshold(f64),
    #[error("no corpus entry for question `{0}`")]
    UnknownQuestion(String),
    #[error("question `{question_id}` is labeled IK but has no correct responses")]
    NoCorrectResponse { question_id: String },
}

/// IK = the model knows this question; IDK = it does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "IK")]
    Ik,
    #[serde(rename = "IDK")]
    Idk,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Ik => f.write_str("IK"),
            Label::Idk => f.write_str("IDK"),
        }
    }
}

/// Accuracy of one question's sample set, with the responses partitioned by
/// judgment. Response lists preserve sample order, so the first entry of
/// `correct_responses` is the lowest-index correct sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub question_id: String,
    pub num_samples: u32,
    pub num_correct: u32,
    pub confidence: f64,
    pub correct_responses: Vec<String>,
    pub incorrect_responses: Vec<String>,
    pub refusal_count: u32,
}

/// One alignment-ready SFT row: known questions carry a model-generated
/// correct answer, unknown questions carry the refusal template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdkExample {
    pub question_id: String,
    pub prompt: String,
    pub response: String,
    pub label: Label,
    pub ik_threshold: f64,
}

/// Judge one question's samples and compute its confidence.
///
/// The samples must all belong to one question and their indices must be
/// dense `0..k`. Refusals are counted separately and as incorrect.
pub fn compute_confidence(
    samples: &[SampledResponse],
    answers: &[String],
    cfg: &JudgeConfig,
) -> Result<ConfidenceRecord, LabelerError> {
    let first = samples.first().ok_or(LabelerError::EmptySampleSet {
        question_id: String::new(),
    })?;
    let question_id = first.question_id.clone();
    if let Some(other) = samples.iter().find(|s| s.question_id != question_id) {
        return Err(LabelerError::MixedQuestionIds {
            first: question_id,
            second: other.question_id.clone(),
        });
    }
    let mut sorted: Vec<&SampledResponse> = samples.iter().collect();
    sorted.sort_by_key(|s| s.sample_index);
    let dense = sorted
        .iter()
        .enumerate()
        .all(|(i, s)| s.sample_index == i as u32);
    if !dense {
        return Err(LabelerError::MissingSampleIndex {
            question_id,
            expected: sorted.len() as u32,
            found: sorted.iter().map(|s| s.sample_index).collect(),
        });
    }

    let mut correct_responses = Vec::new();
    let mut incorrect_responses = Vec::new();
    let mut refusal_count = 0u32;
    for sample in &sorted {
        if judge_refusal(&sample.response, cfg) {
            refusal_count += 1;
        } else if judge_correct(&sample.response, answers, cfg) {
            correct_responses.push(sample.response.clone());
        } else {
            incorrect_responses.push(sample.response.clone());
        }
    }
    let num_samples = sorted.len() as u32;
    let num_correct = correct_responses.len() as u32;
    Ok(ConfidenceRecord {
        question_id,
        num_samples,
        num_correct,
        confidence: f64::from(num_correct) / f64::from(num_samples),
        correct_responses,
        incorrect_responses,
        refusal_count,
    })
}

/// Group samples by question id, preserving sample order within a question.
pub fn group_by_question(samples: &[SampledResponse]) -> BTreeMap<String, Vec<SampledResponse>> {
    let mut grouped: BTreeMap<String, Vec<SampledResponse>> = BTreeMap::new();
    for s in samples {
        grouped.entry(s.question_id.clone()).or_default().push(s.clone());
    }
    grouped
}

/// Compute confidence for every question present in `samples`. Each question
/// must have a corpus entry.
pub fn compute_confidence_all(
    samples: &[SampledResponse],
    corpus: &[QaItem],
    cfg: &JudgeConfig,
) -> Result<Vec<ConfidenceRecord>, LabelerError> {
    let by_id: BTreeMap<&str, &QaItem> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    group_by_question(samples)
        .into_iter()
        .map(|(question_id, set)| {
            let item = by_id
                .get(question_id.as_str())
                .ok_or_else(|| LabelerError::UnknownQuestion(question_id.clone()))?;
            compute_confidence(&set, &item.answers, cfg)
        })
        .collect()
}

pub fn validate_threshold(ik_threshold: f64) -> Result<(), LabelerError> {
    if !ik_threshold.is_finite() || ik_threshold <= 0.0 || ik_threshold > MAX_IK_THRESHOLD {
        return Err(LabelerError::InvalidThreshold(ik_threshold));
    }
    Ok(())
}

/// Label one record: IDK iff `confidence < ik_threshold`.
pub fn label(record: &ConfidenceRecord, ik_threshold: f64) -> Result<Label, LabelerError> {
    validate_threshold(ik_threshold)?;
    if record.confidence < ik_threshold {
        Ok(Label::Idk)
    } else {
        Ok(Label::Ik)
    }
}

/// Build the Idk SFT dataset: IK questions paired with their first correct
/// sampled response, IDK questions paired with the refusal template. Rows
/// come out sorted by question id.
pub fn build_idk_dataset(
    records: &[ConfidenceRecord],
    corpus: &[QaItem],
    ik_threshold: f64,
    cfg: &JudgeConfig,
) -> Result<Vec<IdkExample>, LabelerError> {
    validate_threshold(ik_threshold)?;
    let by_id: BTreeMap<&str, &QaItem> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut sorted: Vec<&ConfidenceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    sorted
        .into_iter()
        .map(|record| {
            let item = by_id
                .get(record.question_id.as_str())
                .ok_or_else(|| LabelerError::UnknownQuestion(record.question_id.clone()))?;
            let this_label = label(record, ik_threshold)?;
            let response = match this_label {
                Label::Idk => cfg.refusal_template.clone(),
                Label::Ik => record
                    .correct_responses
                    .first()
                    .cloned()
                    .ok_or_else(|| LabelerError::NoCorrectResponse {
                        question_id: record.question_id.clone(),
                    })?,
            };
            Ok(IdkExample {
                question_id: record.question_id.clone(),
                prompt: item.question.clone(),
                response,
                label: this_label,
                ik_threshold,
            })
        })
        .collect()
}

/// All-IDK dataset for corpora that are unknown by construction: every
/// question gets the refusal template, regardless of sampled confidence.
pub fn force_idk_dataset(
    corpus: &[QaItem],
    ik_threshold: f64,
    cfg: &JudgeConfig,
) -> Result<Vec<IdkExample>, LabelerError> {
    validate_threshold(ik_threshold)?;
    let mut sorted: Vec<&QaItem> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(sorted
        .into_iter()
        .map(|item| IdkExample {
            question_id: item.id.clone(),
            prompt: item.question.clone(),
            response: cfg.refusal_template.clone(),
            label: Label::Idk,
            ik_threshold,
        })
        .collect())
}
