//! Sampling k responses per question from a chat-completions endpoint or a
//! seeded simulated model, with resumable persistence.
//!
//! Output order is always canonicalized by `(question_id, sample_index)`
//! regardless of request completion order, so the persisted `samples.jsonl`
//! is a pure function of the inputs for the simulated backend.

pub mod remote;
pub mod simulated;

pub use remote::EndpointSpec;
pub use simulated::{ProbabilityRule, SimulatedModelSpec};

use crate::corpus::{render_prompt, PromptTemplate, QaItem};
use crate::judge::JudgeConfig;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("invalid sampling params: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error("authentication failed against {url}: {message}")]
    Auth { url: String, message: String },
    #[error("partial samples file {path} is corrupt: {}", format_bad_lines(.lines))]
    CorruptPartial {
        path: String,
        lines: Vec<(usize, String)>,
    },
    #[error("simulated probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("cannot emit a distractor for question `{0}`: every candidate contains a gold answer")]
    DistractorUnsatisfiable(String),
    #[error("correct-answer emission for question `{0}` failed the judge check")]
    CorrectEmissionRejected(String),
    #[error("failed to start async runtime: {0}")]
    Runtime(String),
}

fn format_bad_lines(lines: &[(usize, String)]) -> String {
    lines
        .iter()
        .map(|(n, msg)| format!("line {n}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Decoding and batching parameters for one sampling run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    /// Responses per question (k).
    pub num_samples: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub repetition_penalty: f64,
    /// Stream seed; only the simulated backend consumes it.
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            num_samples: 10,
            temperature: 1.0,
            top_p: 0.9,
            max_new_tokens: 512,
            repetition_penalty: 1.0,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.num_samples == 0 {
            return Err(InferenceError::InvalidParams(
                "num_samples must be >= 1".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(InferenceError::InvalidParams(format!(
                "temperature {} must be non-negative",
                self.temperature
            )));
        }
        if !self.top_p.is_finite() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(InferenceError::InvalidParams(format!(
                "top_p {} must lie in (0, 1]",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(InferenceError::InvalidParams(
                "max_new_tokens must be >= 1".into(),
            ));
        }
        if !self.repetition_penalty.is_finite() || self.repetition_penalty <= 0.0 {
            return Err(InferenceError::InvalidParams(format!(
                "repetition_penalty {} must be positive",
                self.repetition_penalty
            )));
        }
        Ok(())
    }
}

/// Which kind of backend produced a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Simulated,
}

/// One sampled response for one `(question, sample_index)` slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub question_id: String,
    pub sample_index: u32,
    pub response: String,
    pub backend: BackendKind,
}

/// A question whose sample set could not be completed within the retry
/// budget. Successful sibling samples are kept so a later resume only
/// requests the missing slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleFailure {
    pub question_id: String,
    pub missing_indices: Vec<u32>,
    pub error: String,
}

/// Result of a sampling or resume run.
#[derive(Debug, Clone)]
pub struct SampleRun {
    /// Successful samples, sorted by `(question_id, sample_index)`.
    pub responses: Vec<SampledResponse>,
    /// Per-question failure records, sorted by question id.
    pub failures: Vec<SampleFailure>,
    /// How many `(question, index)` slots were actually requested.
    pub newly_sampled: usize,
}

/// Where responses come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSpec {
    Remote(EndpointSpec),
    Simulated(SimulatedModelSpec),
}

impl BackendSpec {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendSpec::Remote(_) => BackendKind::Remote,
            BackendSpec::Simulated(_) => BackendKind::Simulated,
        }
    }
}

/// One `(question, sample_index)` slot to fill.
#[derive(Debug, Clone)]
pub(crate) struct SlotRequest {
    pub item: QaItem,
    pub sample_index: u32,
    pub prompt: String,
}

/// `(question_id, sample_index, error)` for a slot that could not be filled.
pub(crate) type SlotError = (String, u32, String);

/// Sample `params.num_samples` responses for every item.
///
/// Remote transport failures that survive the retry budget become per-item
/// failure records; authentication failures abort the run.
pub fn sample(
    items: &[QaItem],
    params: &SamplingParams,
    backend: &BackendSpec,
    template: PromptTemplate,
    judge: &JudgeConfig,
) -> Result<SampleRun, InferenceError> {
    let slots = all_slots(items, params, template)?;
    run_slots(slots, params, backend, judge)
}

/// Complete a partial `samples.jsonl`: only missing `(question_id,
/// sample_index)` pairs are requested; completed pairs are never
/// re-requested. The returned run contains the merged (old plus new) sample
/// set.
pub fn resume(
    samples_path: &Path,
    items: &[QaItem],
    params: &SamplingParams,
    backend: &BackendSpec,
    template: PromptTemplate,
    judge: &JudgeConfig,
) -> Result<SampleRun, InferenceError> {
    params.validate()?;
    let existing = read_samples_strict(samples_path)?;
    let have: BTreeSet<(String, u32)> = existing
        .iter()
        .map(|r| (r.question_id.clone(), r.sample_index))
        .collect();
    let slots: Vec<SlotRequest> = all_slots(items, params, template)?
        .into_iter()
        .filter(|s| !have.contains(&(s.item.id.clone(), s.sample_index)))
        .collect();
    let mut run = run_slots(slots, params, backend, judge)?;
    run.responses.extend(existing);
    canonicalize(&mut run.responses);
    Ok(run)
}

fn all_slots(
    items: &[QaItem],
    params: &SamplingParams,
    template: PromptTemplate,
) -> Result<Vec<SlotRequest>, InferenceError> {
    params.validate()?;
    let mut slots = Vec::with_capacity(items.len() * params.num_samples as usize);
    for item in items {
        let prompt = render_prompt(item, template)?;
        for sample_index in 0..params.num_samples {
            slots.push(SlotRequest {
                item: item.clone(),
                sample_index,
                prompt: prompt.clone(),
            });
        }
    }
    Ok(slots)
}

fn run_slots(
    slots: Vec<SlotRequest>,
    params: &SamplingParams,
    backend: &BackendSpec,
    judge: &JudgeConfig,
) -> Result<SampleRun, InferenceError> {
    let requested = slots.len();
    let (mut responses, slot_errors) = match backend {
        BackendSpec::Simulated(spec) => {
            let mut out = Vec::with_capacity(slots.len());
            for slot in &slots {
                let response = simulated::generate(spec, &slot.item, slot.sample_index, params, judge)?;
                out.push(SampledResponse {
                    question_id: slot.item.id.clone(),
                    sample_index: slot.sample_index,
                    response,
                    backend: BackendKind::Simulated,
                });
            }
            (out, Vec::new())
        }
        BackendSpec::Remote(endpoint) => remote::run_batch(endpoint, &slots, params)?,
    };
    canonicalize(&mut responses);
    let failures = collect_failures(slot_errors);
    Ok(SampleRun {
        responses,
        failures,
        newly_sampled: requested,
    })
}

fn canonicalize(responses: &mut [SampledResponse]) {
    responses.sort_by(|a, b| {
        (a.question_id.as_str(), a.sample_index).cmp(&(b.question_id.as_str(), b.sample_index))
    });
}

/// Fold per-slot errors into one failure record per question.
fn collect_failures(slot_errors: Vec<SlotError>) -> Vec<SampleFailure> {
    let mut by_question: BTreeMap<String, SampleFailure> = BTreeMap::new();
    for (question_id, index, error) in slot_errors {
        let entry = by_question
            .entry(question_id.clone())
            .or_insert_with(|| SampleFailure {
                question_id,
                missing_indices: Vec::new(),
                error,
            });
        entry.missing_indices.push(index);
    }
    let mut failures: Vec<SampleFailure> = by_question.into_values().collect();
    for f in &mut failures {
        f.missing_indices.sort_unstable();
    }
    failures
}

/// Write samples in the canonical on-disk schema, sorted.
pub fn write_samples(path: &Path, responses: &[SampledResponse]) -> Result<(), InferenceError> {
    let mut sorted = responses.to_vec();
    canonicalize(&mut sorted);
    crate::jsonl::write_jsonl(path, &sorted)?;
    Ok(())
}

/// Read a samples file, rejecting corrupt lines with their line numbers.
pub fn read_samples_strict(path: &Path) -> Result<Vec<SampledResponse>, InferenceError> {
    let (rows, bad) = crate::jsonl::read_jsonl_lenient::<SampledResponse>(path)?;
    if !bad.is_empty() {
        return Err(InferenceError::CorruptPartial {
            path: path.display().to_string(),
            lines: bad,
        });
    }
    Ok(rows)
}
