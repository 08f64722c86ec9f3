//! Combine Idk datasets across the threshold grid into one dataset whose
//! prompts carry a knowledge-confidence-level instruction.
//!
//! The confidence level encoded into the prompt is `1.1 - ik_threshold`, so
//! the strictest threshold (1.1, the all-refusal dataset) maps to level 0.0
//! and the loosest (0.1) to level 1.0.

use crate::corpus::{render_prompt, PromptTemplate, QaItem};
use crate::judge::JudgeConfig;
use crate::labeler::{self, ConfidenceRecord, Label, LabelerError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum HirError {
    #[error("ik threshold {0} is not on the grid 0.1, 0.2, ..., 1.1")]
    OffGridThreshold(f64),
    #[error("bad threshold list `{0}`: expected start:end:step or a comma-separated list")]
    BadThresholdList(String),
    #[error(transparent)]
    Labeler(#[from] LabelerError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// One combined-dataset row: an Idk SFT row plus the confidence level its
/// prompt encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HirExample {
    pub question_id: String,
    pub prompt: String,
    pub response: String,
    pub label: Label,
    pub ik_threshold: f64,
    pub confidence_level: f64,
}

/// Threshold expressed in integer tenths, validated against the grid.
fn grid_tenths(ik_threshold: f64) -> Result<u32, HirError> {
    let scaled = ik_threshold * 10.0;
    let rounded = scaled.round();
    if !scaled.is_finite() || (scaled - rounded).abs() > 1e-6 {
        return Err(HirError::OffGridThreshold(ik_threshold));
    }
    let tenths = rounded as i64;
    if !(1..=11).contains(&tenths) {
        return Err(HirError::OffGridThreshold(ik_threshold));
    }
    Ok(tenths as u32)
}

/// The full grid 0.1, 0.2, ..., 1.0, 1.1.
pub fn full_threshold_grid() -> Vec<f64> {
    (1..=11).map(|t| f64::from(t) / 10.0).collect()
}

/// Validate a threshold against the grid and return its canonical one-decimal
/// value.
pub fn canonicalize_threshold(ik_threshold: f64) -> Result<f64, HirError> {
    grid_tenths(ik_threshold).map(|t| f64::from(t) / 10.0)
}

/// Map an Ik threshold on the grid to its knowledge confidence level,
/// `1.1 - ik_threshold`, exact to one decimal.
pub fn threshold_to_confidence(ik_threshold: f64) -> Result<f64, HirError> {
    let tenths = grid_tenths(ik_threshold)?;
    Ok(f64::from(11 - tenths) / 10.0)
}

/// Parse a CLI threshold list: either `start:end:step` (inclusive) or a
/// comma-separated list. Every value must sit on the grid.
pub fn parse_thresholds(spec: &str) -> Result<Vec<f64>, HirError> {
    let bad = || HirError::BadThresholdList(spec.to_string());
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let parse = |s: &str| -> Result<u32, HirError> {
            let v: f64 = s.trim().parse().map_err(|_| bad())?;
            grid_tenths(v)
        };
        let start = parse(parts[0])?;
        let end = parse(parts[1])?;
        let step = {
            let v: f64 = parts[2].trim().parse().map_err(|_| bad())?;
            let scaled = (v * 10.0).round();
            if v <= 0.0 || (v * 10.0 - scaled).abs() > 1e-6 {
                return Err(bad());
            }
            scaled as u32
        };
        if start > end || step == 0 {
            return Err(bad());
        }
        Ok((start..=end)
            .step_by(step as usize)
            .map(|t| f64::from(t) / 10.0)
            .collect())
    } else {
        spec.split(',')
            .map(|s| {
                let v: f64 = s.trim().parse().map_err(|_| bad())?;
                grid_tenths(v).map(|t| f64::from(t) / 10.0)
            })
            .collect()
    }
}

/// Build the combined HIR dataset: for each threshold, every question is
/// labeled at that threshold, its prompt rendered with the corresponding
/// confidence level, and its target set exactly as in the plain Idk dataset.
/// Output is the concatenation over thresholds; row count is
/// `|thresholds| x |records|`.
pub fn build_hir_dataset(
    records: &[ConfidenceRecord],
    corpus: &[QaItem],
    thresholds: &[f64],
    cfg: &JudgeConfig,
) -> Result<Vec<HirExample>, HirError> {
    for &t in thresholds {
        grid_tenths(t)?;
    }
    let by_id: BTreeMap<&str, &QaItem> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut sorted: Vec<&ConfidenceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let mut rows = Vec::with_capacity(thresholds.len() * records.len());
    for &threshold in thresholds {
        let level = threshold_to_confidence(threshold)?;
        for record in &sorted {
            let item = by_id
                .get(record.question_id.as_str())
                .ok_or_else(|| LabelerError::UnknownQuestion(record.question_id.clone()))?;
            let this_label = labeler::label(record, threshold)?;
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
            rows.push(HirExample {
                question_id: record.question_id.clone(),
                prompt: render_prompt(item, PromptTemplate::Hir(level))?,
                response,
                label: this_label,
                ik_threshold: threshold,
                confidence_level: level,
            });
        }
    }
    Ok(rows)
}
