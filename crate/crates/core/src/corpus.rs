//! QA corpus ingestion, prompt templating, and deterministic train/dev
//! splits.
//!
//! The canonical on-disk form is `questions.jsonl`: one object per line with
//! `{"id", "question", "answers": [...], "source"}`. TriviaQA and NQ-Open
//! adapters map their native JSONL fields onto that schema so every
//! downstream stage sees one shape.

use crate::split;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Instruction prepended to the question for refusal-aware prompting.
pub const IDK_PROMPT_PREFIX: &str = "Answer the following question, and if you don't know the answer, only reply with \"I don't know\": ";

/// Instruction prefix for confidence-level (HIR) prompting; the level is
/// rendered to one decimal place.
pub const HIR_PROMPT_FMT_PREFIX: &str = "Your current knowledge expression confidence level is ";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error("{path}:{line}: {message}")]
    InvalidItem {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("item `{id}` has no usable gold answers")]
    EmptyAnswers { id: String },
    #[error("dev_fraction {0} outside [0, 1)")]
    InvalidDevFraction(f64),
    #[error("confidence level {0} outside [0, 1]")]
    InvalidHirLevel(f64),
    #[error("unknown corpus format `{0}` (expected triviaqa-jsonl, nq-jsonl, or generic-jsonl)")]
    UnknownFormat(String),
    #[error("unknown prompt template `{0}` (expected plain, idk-prompt, or hir:<level>)")]
    UnknownTemplate(String),
}

/// One question with its set of acceptable gold answers (aliases).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub source: String,
}

impl QaItem {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        answers: Vec<String>,
        source: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let item = Self {
            id: id.into(),
            question: question.into(),
            answers,
            source: source.into(),
        };
        item.validate()?;
        Ok(item)
    }

    /// Answers must be non-empty and each non-blank after trimming.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.answers.is_empty() || self.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(CorpusError::EmptyAnswers {
                id: self.id.clone(),
            });
        }
        Ok(())
    }
}

/// Supported input schemas for [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// Native TriviaQA records (`QuestionId`, `Question`, `Answer.Aliases`).
    TriviaqaJsonl,
    /// NQ-Open records (`question`, `answer` list); ids are synthesized from
    /// line numbers.
    NqJsonl,
    /// The canonical `questions.jsonl` schema.
    GenericJsonl,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "triviaqa-jsonl" => Ok(Self::TriviaqaJsonl),
            "nq-jsonl" => Ok(Self::NqJsonl),
            "generic-jsonl" => Ok(Self::GenericJsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::TriviaqaJsonl => "triviaqa-jsonl",
            Self::NqJsonl => "nq-jsonl",
            Self::GenericJsonl => "generic-jsonl",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Deserialize)]
struct TriviaqaAnswer {
    #[serde(rename = "Value")]
    value: Option<String>,
    #[serde(rename = "Aliases", default)]
    aliases: Vec<String>,
    #[serde(rename = "NormalizedAliases", default)]
    normalized_aliases: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TriviaqaRecord {
    #[serde(rename = "QuestionId")]
    question_id: String,
    #[serde(rename = "Question")]
    question: String,
    #[serde(rename = "Answer")]
    answer: TriviaqaAnswer,
}

impl TriviaqaRecord {
    fn into_item(self) -> Result<QaItem, CorpusError> {
        let mut answers: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for alias in self
            .answer
            .aliases
            .into_iter()
            .chain(self.answer.normalized_aliases)
            .chain(self.answer.value)
        {
            if !alias.trim().is_empty() && seen.insert(alias.clone()) {
                answers.push(alias);
            }
        }
        QaItem::new(self.question_id, self.question, answers, "triviaqa")
    }
}

#[derive(Debug, Deserialize)]
struct NqRecord {
    question: String,
    answer: Vec<String>,
}

/// Load a QA corpus from `path` under the declared schema.
///
/// Every line must parse; malformed lines abort with their line number, and
/// duplicate ids are rejected.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<QaItem>, CorpusError> {
    let items = match format {
        CorpusFormat::GenericJsonl => crate::jsonl::read_jsonl::<QaItem>(path)?,
        CorpusFormat::TriviaqaJsonl => {
            let records = crate::jsonl::read_jsonl::<TriviaqaRecord>(path)?;
            records
                .into_iter()
                .map(TriviaqaRecord::into_item)
                .collect::<Result<Vec<_>, _>>()?
        }
        CorpusFormat::NqJsonl => {
            let records = crate::jsonl::read_jsonl::<NqRecord>(path)?;
            records
                .into_iter()
                .enumerate()
                .map(|(idx, r)| QaItem::new(format!("nq-{idx}"), r.question, r.answer, "nq"))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let mut seen = HashSet::new();
    for item in &items {
        item.validate()?;
        if !seen.insert(item.id.as_str()) {
            return Err(CorpusError::DuplicateId(item.id.clone()));
        }
    }
    Ok(items)
}

/// Write `items` in the canonical `questions.jsonl` schema.
pub fn save_corpus(path: &Path, items: &[QaItem]) -> Result<(), CorpusError> {
    crate::jsonl::write_jsonl(path, items)?;
    Ok(())
}

/// How to split a corpus into train and dev parts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of items assigned to dev, in `[0, 1)`.
    pub dev_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(CorpusError::InvalidDevFraction(self.dev_fraction));
        }
        Ok(())
    }
}

/// Partition `items` into `(train, dev)` with `|dev| = round-half-up of
/// dev_fraction x |items|`, by seeded shuffle then prefix-take. Deterministic
/// under a fixed `(items, spec)`.
pub fn split_corpus(items: Vec<QaItem>, spec: &SplitSpec) -> Result<(Vec<QaItem>, Vec<QaItem>), CorpusError> {
    spec.validate()?;
    let (dev, train) = split::seeded_fraction(items, spec.dev_fraction, spec.seed);
    Ok((train, dev))
}

/// Prompt shapes the toolkit knows how to render.
///
/// The string forms accepted by [`FromStr`] (and used in config files) are
/// `plain`, `idk-prompt`, and `hir:<level>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PromptTemplate {
    /// The question verbatim.
    Plain,
    /// Refusal instruction prepended to the question.
    IdkPrompt,
    /// Confidence-level instruction with the given level in `[0, 1]`.
    Hir(f64),
}

impl FromStr for PromptTemplate {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Self::Plain),
            "idk-prompt" => Ok(Self::IdkPrompt),
            other => {
                if let Some(level) = other.strip_prefix("hir:") {
                    let level: f64 = level
                        .parse()
                        .map_err(|_| CorpusError::UnknownTemplate(other.to_string()))?;
                    Ok(Self::Hir(level))
                } else {
                    Err(CorpusError::UnknownTemplate(other.to_string()))
                }
            }
        }
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = CorpusError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        match t {
            PromptTemplate::Plain => "plain".to_string(),
            PromptTemplate::IdkPrompt => "idk-prompt".to_string(),
            PromptTemplate::Hir(level) => format!("hir:{level}"),
        }
    }
}

/// Render the prompt for `item` under `template`.
///
/// The HIR level must lie in `[0, 1]` and is rendered to one decimal place.
pub fn render_prompt(item: &QaItem, template: PromptTemplate) -> Result<String, CorpusError> {
    match template {
        PromptTemplate::Plain => Ok(item.question.clone()),
        PromptTemplate::IdkPrompt => Ok(format!("{IDK_PROMPT_PREFIX}{}", item.question)),
        PromptTemplate::Hir(level) => {
            if !(0.0..=1.0).contains(&level) {
                return Err(CorpusError::InvalidHirLevel(level));
            }
            Ok(format!(
                "{HIR_PROMPT_FMT_PREFIX}{level:.1}, please answer the user's question: {}",
                item.question
            ))
        }
    }
}
