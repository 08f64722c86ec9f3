//! Response correctness by lexical matching and refusal detection by
//! template/substring matching.
//!
//! Both judgments normalize text first: Unicode case folding (lowercase
//! mapping) plus collapsing whitespace runs to single spaces. A response is
//! correct when any normalized gold answer occurs as a substring of the
//! normalized response; it is a refusal when the full refusal template or any
//! configured refusal substring occurs. When a response matches both, refusal
//! takes precedence everywhere this module's callers classify samples.

use serde::{Deserialize, Serialize};

/// The refusal sentence annotated onto unknown questions and matched during
/// evaluation.
pub const DEFAULT_REFUSAL_TEMPLATE: &str =
    "This question is beyond the scope of my knowledge, and I am not sure what the answer is.";

/// Fallback refusal markers for models that rephrase the full template.
pub const DEFAULT_REFUSAL_SUBSTRINGS: &[&str] = &["I am not sure what the answer is"];

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("refusal template must be non-empty")]
    EmptyTemplate,
    #[error("refusal substring at index {0} is empty")]
    EmptySubstring(usize),
}

/// Configuration for correctness and refusal judging.
///
/// Serialized as a JSON fragment inside the run config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JudgeConfig {
    /// Full refusal template; also the target response for IDK-labeled rows.
    #[serde(default = "default_template")]
    pub refusal_template: String,
    /// Any of these occurring in a response marks it as a refusal.
    #[serde(default = "default_substrings")]
    pub refusal_substrings: Vec<String>,
}

fn default_template() -> String {
    DEFAULT_REFUSAL_TEMPLATE.to_string()
}

fn default_substrings() -> Vec<String> {
    DEFAULT_REFUSAL_SUBSTRINGS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            refusal_template: default_template(),
            refusal_substrings: default_substrings(),
        }
    }
}

impl JudgeConfig {
    /// Check the config invariants: non-empty template and substrings.
    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.refusal_template.trim().is_empty() {
            return Err(JudgeError::EmptyTemplate);
        }
        for (i, s) in self.refusal_substrings.iter().enumerate() {
            if s.trim().is_empty() {
                return Err(JudgeError::EmptySubstring(i));
            }
        }
        Ok(())
    }

    /// Apply this config's normalization: casefold plus whitespace-run
    /// collapse. Idempotent.
    pub fn normalize(&self, text: &str) -> String {
        normalize(text)
    }
}

/// Casefold and collapse whitespace runs. Idempotent.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// True iff any normalized gold answer is a substring of the normalized
/// response. Gold answers that are empty after normalization never match.
pub fn judge_correct(response: &str, answers: &[String], cfg: &JudgeConfig) -> bool {
    let response = cfg.normalize(response);
    answers.iter().any(|answer| {
        let answer = cfg.normalize(answer);
        !answer.is_empty() && response.contains(&answer)
    })
}

/// True iff the full refusal template or any configured refusal substring
/// occurs in the response (after normalization).
pub fn judge_refusal(response: &str, cfg: &JudgeConfig) -> bool {
    let response = cfg.normalize(response);
    let template = cfg.normalize(&cfg.refusal_template);
    if !template.is_empty() && response.contains(&template) {
        return true;
    }
    cfg.refusal_substrings.iter().any(|s| {
        let s = cfg.normalize(s);
        !s.is_empty() && response.contains(&s)
    })
}
