//! Seeded simulated model: a desk-scale stand-in for a real chat model with a
//! controllable per-question correctness probability.
//!
//! Every `(seed, question_id, sample_index)` triple keys its own RNG stream,
//! so individual slots can be regenerated in any order (or resumed) without
//! changing their outcome. Per slot the backend first draws whether to
//! refuse, then whether to answer correctly; emissions are checked against
//! the judge at generation time so a "correct" response always satisfies the
//! correctness predicate and a distractor never does.

use super::{InferenceError, SamplingParams};
use crate::corpus::QaItem;
use crate::judge::{judge_correct, judge_refusal, JudgeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

/// Wrong-answer phrasings tried in order until one evades every gold alias.
const DECOY_ANSWERS: &[&str] = &[
    "the Eiffel Tower",
    "Johann Sebastian Bach",
    "the year 1987",
    "a species of flightless bird",
    "the Pacific Ocean",
    "Leonardo da Vinci",
    "the French Revolution",
    "quantum entanglement",
    "Mount Kilimanjaro",
    "the Treaty of Westphalia",
    "a Byzantine mosaic",
    "the number seventeen",
    "photosynthesis",
    "the planet Neptune",
    "an ancient Sumerian city",
    "the Amazon rainforest",
];

/// Last-resort distractor fillers for pathological gold answers (for example
/// single letters, which almost any sentence would contain).
const FILLER_CHARS: &[char] = &[
    'x', 'q', 'z', 'j', 'v', 'k', 'w', 'y', 'b', 'g', '0', '1', '2', '3', '4', '5', '6', '7', '8',
    '9',
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityRule {
    /// Same probability for every question.
    Constant(f64),
    /// Explicit per-question probabilities with a default for ids not listed.
    PerQuestion {
        map: HashMap<String, f64>,
        #[serde(default)]
        default: f64,
    },
    /// Assign one of the listed levels by a stable hash of the question id.
    Grid(Vec<f64>),
}

impl ProbabilityRule {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let check = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(InferenceError::InvalidProbability(p))
            }
        };
        match self {
            ProbabilityRule::Constant(p) => check(*p),
            ProbabilityRule::PerQuestion { map, default } => {
                check(*default)?;
                map.values().try_for_each(|p| check(*p))
            }
            ProbabilityRule::Grid(levels) => {
                if levels.is_empty() {
                    return Err(InferenceError::InvalidParams(
                        "probability grid must be non-empty".into(),
                    ));
                }
                levels.iter().try_for_each(|p| check(*p))
            }
        }
    }

    /// Probability assigned to `question_id`.
    pub fn for_question(&self, question_id: &str) -> f64 {
        match self {
            ProbabilityRule::Constant(p) => *p,
            ProbabilityRule::PerQuestion { map, default } => {
                map.get(question_id).copied().unwrap_or(*default)
            }
            ProbabilityRule::Grid(levels) => {
                let idx = (stable_hash(question_id) % levels.len() as u64) as usize;
                levels[idx]
            }
        }
    }
}

/// Latent behavior of the simulated model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedModelSpec {
    /// Chance that a non-refusing sample contains a gold answer.
    pub correctness: ProbabilityRule,
    /// Chance that a sample is the refusal template. Drawn before
    /// correctness.
    #[serde(default = "zero_refusal")]
    pub refusal: ProbabilityRule,
}

fn zero_refusal() -> ProbabilityRule {
    ProbabilityRule::Constant(0.0)
}

impl SimulatedModelSpec {
    /// Always-correct model.
    pub fn perfect() -> Self {
        Self::with_correctness(1.0)
    }

    pub fn with_correctness(p: f64) -> Self {
        Self {
            correctness: ProbabilityRule::Constant(p),
            refusal: zero_refusal(),
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        self.correctness.validate()?;
        self.refusal.validate()
    }
}

fn stable_hash(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Independent RNG stream for one `(seed, question_id, sample_index)` slot.
pub(crate) fn slot_rng(seed: u64, question_id: &str, sample_index: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((question_id.len() as u64).to_le_bytes());
    hasher.update(question_id.as_bytes());
    hasher.update(sample_index.to_le_bytes());
    let digest = hasher.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Generate the response for one slot.
pub(crate) fn generate(
    spec: &SimulatedModelSpec,
    item: &QaItem,
    sample_index: u32,
    params: &SamplingParams,
    judge: &JudgeConfig,
) -> Result<String, InferenceError> {
    spec.validate()?;
    let mut rng = slot_rng(params.seed, &item.id, sample_index);
    let refuse: f64 = rng.gen();
    if refuse < spec.refusal.for_question(&item.id) {
        return Ok(judge.refusal_template.clone());
    }
    let correct: f64 = rng.gen();
    if correct < spec.correctness.for_question(&item.id) {
        emit_correct(item, &mut rng, judge)
    } else {
        emit_distractor(item, &mut rng, judge)
    }
}

/// A response containing one of the gold answers, verified against the judge.
fn emit_correct(
    item: &QaItem,
    rng: &mut ChaCha8Rng,
    judge: &JudgeConfig,
) -> Result<String, InferenceError> {
    let alias = &item.answers[rng.gen_range(0..item.answers.len())];
    for candidate in [format!("The answer is {alias}."), alias.clone()] {
        if judge_correct(&candidate, &item.answers, judge) && !judge_refusal(&candidate, judge) {
            return Ok(candidate);
        }
    }
    Err(InferenceError::CorrectEmissionRejected(item.id.clone()))
}

/// A response containing no gold answer, verified against the judge.
fn emit_distractor(
    item: &QaItem,
    rng: &mut ChaCha8Rng,
    judge: &JudgeConfig,
) -> Result<String, InferenceError> {
    let start = rng.gen_range(0..DECOY_ANSWERS.len());
    for offset in 0..DECOY_ANSWERS.len() {
        let decoy = DECOY_ANSWERS[(start + offset) % DECOY_ANSWERS.len()];
        let candidate = format!("I believe the answer is {decoy}.");
        if !judge_correct(&candidate, &item.answers, judge) && !judge_refusal(&candidate, judge) {
            return Ok(candidate);
        }
    }
    for &c in FILLER_CHARS {
        let candidate: String = std::iter::repeat_n(c, 8).collect();
        if !judge_correct(&candidate, &item.answers, judge) && !judge_refusal(&candidate, judge) {
            return Ok(candidate);
        }
    }
    Err(InferenceError::DistractorUnsatisfiable(item.id.clone()))
}
