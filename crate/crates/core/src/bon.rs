//! Best-of-n selection: sample n candidates per question, score each with a
//! reward source, keep the argmax (ties break to the lowest index).

use crate::corpus::{render_prompt, PromptTemplate, QaItem};
use crate::evaluator::ResponseRow;
use crate::inference::{self, BackendSpec, SampledResponse, SamplingParams};
use crate::judge::{judge_correct, judge_refusal, JudgeConfig};
use crate::labeler::Label;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum BonError {
    #[error("cannot select from zero candidates")]
    EmptyCandidates,
    #[error("candidate {index} has non-finite score {score}")]
    NonFiniteScore { index: usize, score: f64 },
    #[error("n must be >= 1")]
    InvalidN,
    #[error(transparent)]
    Inference(#[from] crate::inference::InferenceError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("no gold label for question `{0}`")]
    MissingGoldLabel(String),
}

/// One scored response.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub response: String,
    pub score: f64,
}

/// Index and candidate with the maximal score; ties break to the lowest
/// index. Invariant under positive affine transformations of all scores.
pub fn select(candidates: &[Candidate]) -> Result<(usize, &Candidate), BonError> {
    if candidates.is_empty() {
        return Err(BonError::EmptyCandidates);
    }
    let mut best = 0usize;
    for (index, candidate) in candidates.iter().enumerate() {
        if !candidate.score.is_finite() {
            return Err(BonError::NonFiniteScore {
                index,
                score: candidate.score,
            });
        }
        if candidate.score > candidates[best].score {
            best = index;
        }
    }
    Ok((best, &candidates[best]))
}

/// Scores `(prompt, response)` pairs. The question is provided for simulated
/// scorers keyed to judge outcomes; remote scorers ignore it.
pub trait RewardSource {
    fn score(&self, item: &QaItem, prompt: &str, response: &str) -> Result<f64, BonError>;
}

/// Judge-keyed scorers for desk-scale runs.
#[derive(Debug, Clone)]
pub enum SimulatedScorer {
    /// Reward 1.0 for responses the judge marks correct, 0.0 otherwise.
    Correctness { judge: JudgeConfig },
    /// Reward 1.0 for the truthful action given gold labels: a correct
    /// answer on a gold-IK question, or a refusal on a gold-IDK question.
    Truthfulness {
        judge: JudgeConfig,
        gold: BTreeMap<String, Label>,
    },
}

impl RewardSource for SimulatedScorer {
    fn score(&self, item: &QaItem, _prompt: &str, response: &str) -> Result<f64, BonError> {
        match self {
            SimulatedScorer::Correctness { judge } => {
                let correct =
                    !judge_refusal(response, judge) && judge_correct(response, &item.answers, judge);
                Ok(if correct { 1.0 } else { 0.0 })
            }
            SimulatedScorer::Truthfulness { judge, gold } => {
                let label = gold
                    .get(&item.id)
                    .ok_or_else(|| BonError::MissingGoldLabel(item.id.clone()))?;
                let refused = judge_refusal(response, judge);
                let truthful = match label {
                    Label::Ik => !refused && judge_correct(response, &item.answers, judge),
                    Label::Idk => refused,
                };
                Ok(if truthful { 1.0 } else { 0.0 })
            }
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    response: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// Client for a remote scoring endpoint:
/// request `{"prompt", "response"}`, response `{"score": number}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteScorerSpec {
    pub url: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_timeout_secs() -> u64 {
    60
}

impl RemoteScorerSpec {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn with_env_api_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(crate::inference::remote::API_KEY_ENV).ok();
        }
        self
    }
}

/// Blocking remote reward source with retry.
pub struct RemoteScorer {
    spec: RemoteScorerSpec,
    client: reqwest::blocking::Client,
}

impl RemoteScorer {
    pub fn new(spec: RemoteScorerSpec) -> Result<Self, BonError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs))
            .build()
            .map_err(|e| BonError::Scorer(e.to_string()))?;
        Ok(Self { spec, client })
    }
}

impl RewardSource for RemoteScorer {
    fn score(&self, _item: &QaItem, prompt: &str, response: &str) -> Result<f64, BonError> {
        let body = ScoreRequest { prompt, response };
        let mut last_error = String::new();
        for attempt in 0..=self.spec.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.spec.backoff_ms.saturating_mul(1 << (attempt - 1)),
                ));
            }
            let mut request = self.client.post(&self.spec.url).json(&body);
            if let Some(key) = &self.spec.api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        match resp.json::<ScoreResponse>() {
                            Ok(parsed) => return Ok(parsed.score),
                            Err(e) => {
                                last_error = format!("bad score body: {e}");
                                continue;
                            }
                        }
                    }
                    last_error = format!("http {status}");
                    if status.is_client_error()
                        && status != reqwest::StatusCode::TOO_MANY_REQUESTS
                        && status != reqwest::StatusCode::REQUEST_TIMEOUT
                    {
                        break;
                    }
                }
                Err(e) => last_error = format!("transport: {e}"),
            }
        }
        Err(BonError::Scorer(last_error))
    }
}

/// The winning response for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonSelection {
    pub question_id: String,
    pub response: String,
    pub score: f64,
    pub sample_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BonFailure {
    pub question_id: String,
    pub error: String,
}

/// Result of a best-of-n run, ordered by question id.
#[derive(Debug, Clone)]
pub struct BonRun {
    pub selections: Vec<BonSelection>,
    pub failures: Vec<BonFailure>,
}

impl BonRun {
    /// The selections as `responses.jsonl` rows.
    pub fn response_rows(&self) -> Vec<ResponseRow> {
        self.selections
            .iter()
            .map(|s| ResponseRow {
                question_id: s.question_id.clone(),
                response: s.response.clone(),
            })
            .collect()
    }
}

/// Sample `n` candidates per question (temperature 1.0 / top_p 0.9), score
/// them, and keep the argmax per question. Sampling or scoring failures
/// become per-question failure records.
pub fn bon_run(
    items: &[QaItem],
    n: u32,
    backend: &BackendSpec,
    scorer: &dyn RewardSource,
    template: PromptTemplate,
    judge: &JudgeConfig,
    seed: u64,
) -> Result<BonRun, BonError> {
    if n == 0 {
        return Err(BonError::InvalidN);
    }
    let params = SamplingParams {
        num_samples: n,
        seed,
        ..SamplingParams::default()
    };
    let run = inference::sample(items, &params, backend, template, judge)?;

    let mut failures: Vec<BonFailure> = run
        .failures
        .iter()
        .map(|f| BonFailure {
            question_id: f.question_id.clone(),
            error: format!("sampling failed: {}", f.error),
        })
        .collect();
    let failed: std::collections::BTreeSet<&str> =
        failures.iter().map(|f| f.question_id.as_str()).collect();

    let items_by_id: BTreeMap<&str, &QaItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut grouped: BTreeMap<String, Vec<&SampledResponse>> = BTreeMap::new();
    for response in &run.responses {
        if !failed.contains(response.question_id.as_str()) {
            grouped
                .entry(response.question_id.clone())
                .or_default()
                .push(response);
        }
    }

    let mut selections = Vec::new();
    for (question_id, mut set) in grouped {
        set.sort_by_key(|s| s.sample_index);
        let item = items_by_id
            .get(question_id.as_str())
            .expect("sampled question comes from items");
        let prompt = render_prompt(item, template)?;
        let mut candidates = Vec::with_capacity(set.len());
        let mut scorer_error = None;
        for sample in &set {
            match scorer.score(item, &prompt, &sample.response) {
                Ok(score) => candidates.push(Candidate {
                    response: sample.response.clone(),
                    score,
                }),
                Err(e) => {
                    scorer_error = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(error) = scorer_error {
            failures.push(BonFailure { question_id, error });
            continue;
        }
        let (index, winner) = select(&candidates)?;
        selections.push(BonSelection {
            question_id,
            response: winner.response.clone(),
            score: winner.score,
            sample_index: set[index].sample_index,
        });
    }
    failures.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    Ok(BonRun {
        selections,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::SimulatedModelSpec;
    use proptest::prelude::*;

    fn candidates(scores: &[f64]) -> Vec<Candidate> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &score)| Candidate {
                response: format!("r{i}"),
                score,
            })
            .collect()
    }

    #[test]
    fn argmax_selection() {
        let c = candidates(&[0.1, 0.9, 0.5]);
        assert_eq!(select(&c).unwrap().0, 1);
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let c = candidates(&[0.7, 0.7]);
        assert_eq!(select(&c).unwrap().0, 0);
    }

    #[test]
    fn singleton_selects_itself() {
        let c = candidates(&[0.0]);
        assert_eq!(select(&c).unwrap().0, 0);
    }

    #[test]
    fn empty_and_nan_rejected() {
        assert!(matches!(select(&[]), Err(BonError::EmptyCandidates)));
        let c = candidates(&[0.1, f64::NAN]);
        assert!(matches!(select(&c), Err(BonError::NonFiniteScore { .. })));
    }

    fn items(n: usize) -> Vec<QaItem> {
        (0..n)
            .map(|i| {
                QaItem::new(
                    format!("q{i:04}"),
                    format!("Question {i}?"),
                    vec![format!("answer{i}")],
                    "test",
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn correctness_scorer_picks_correct_when_available() {
        let judge = JudgeConfig::default();
        let items = items(200);
        let backend = BackendSpec::Simulated(SimulatedModelSpec::with_correctness(0.5));
        let scorer = SimulatedScorer::Correctness {
            judge: judge.clone(),
        };
        let run = bon_run(
            &items,
            10,
            &backend,
            &scorer,
            PromptTemplate::Plain,
            &judge,
            17,
        )
        .unwrap();
        assert_eq!(run.selections.len(), 200);
        assert!(run.failures.is_empty());

        // Selected response is correct exactly when any of the 10 candidates
        // was correct, which the winning score records.
        for sel in &run.selections {
            let item = items.iter().find(|i| i.id == sel.question_id).unwrap();
            let selected_correct = judge_correct(&sel.response, &item.answers, &judge);
            assert_eq!(selected_correct, sel.score == 1.0);
        }
        // With p=0.5 and n=10 nearly every question has a correct candidate.
        let correct = run.selections.iter().filter(|s| s.score == 1.0).count();
        assert!(correct >= 190, "only {correct}/200 correct selections");
    }

    #[test]
    fn n_one_matches_plain_sampling_byte_for_byte() {
        let judge = JudgeConfig::default();
        let items = items(30);
        let backend = BackendSpec::Simulated(SimulatedModelSpec::with_correctness(0.5));
        let scorer = SimulatedScorer::Correctness {
            judge: judge.clone(),
        };
        let run = bon_run(
            &items,
            1,
            &backend,
            &scorer,
            PromptTemplate::Plain,
            &judge,
            99,
        )
        .unwrap();

        let params = SamplingParams {
            num_samples: 1,
            seed: 99,
            ..SamplingParams::default()
        };
        let plain = inference::sample(&items, &params, &backend, PromptTemplate::Plain, &judge)
            .unwrap();
        let plain_rows = crate::evaluator::responses_from_samples(&plain.responses);

        assert_eq!(
            crate::jsonl::to_jsonl_string(&run.response_rows()),
            crate::jsonl::to_jsonl_string(&plain_rows)
        );
    }

    #[test]
    fn bon_run_rejects_zero_n() {
        let judge = JudgeConfig::default();
        let backend = BackendSpec::Simulated(SimulatedModelSpec::perfect());
        let scorer = SimulatedScorer::Correctness {
            judge: judge.clone(),
        };
        assert!(matches!(
            bon_run(&items(1), 0, &backend, &scorer, PromptTemplate::Plain, &judge, 0),
            Err(BonError::InvalidN)
        ));
    }

    #[test]
    fn truthfulness_scorer_requires_gold() {
        let judge = JudgeConfig::default();
        let scorer = SimulatedScorer::Truthfulness {
            judge: judge.clone(),
            gold: BTreeMap::new(),
        };
        let item = QaItem::new("q", "q?", vec!["Paris".into()], "test").unwrap();
        assert!(matches!(
            scorer.score(&item, "q?", "Paris"),
            Err(BonError::MissingGoldLabel(_))
        ));
    }

    #[test]
    fn bon_never_less_truthful_than_single_sample() {
        // Paired-run comparison: the same sampling seed makes BoN's
        // candidate 0 identical to the single-sample response, so a
        // truthfulness-rewarding scorer can only improve the truthful rate.
        let judge = JudgeConfig::default();
        let items = items(300);
        let gold: BTreeMap<String, Label> = items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                (
                    item.id.clone(),
                    if i % 2 == 0 { Label::Ik } else { Label::Idk },
                )
            })
            .collect();
        let backend = BackendSpec::Simulated(crate::inference::SimulatedModelSpec {
            correctness: crate::inference::ProbabilityRule::Constant(0.5),
            refusal: crate::inference::ProbabilityRule::Constant(0.3),
        });
        let scorer = SimulatedScorer::Truthfulness {
            judge: judge.clone(),
            gold: gold.clone(),
        };
        let seed = 55;
        let bon10 = bon_run(&items, 10, &backend, &scorer, PromptTemplate::Plain, &judge, seed)
            .unwrap();
        let params = SamplingParams {
            num_samples: 1,
            seed,
            ..SamplingParams::default()
        };
        let single = inference::sample(&items, &params, &backend, PromptTemplate::Plain, &judge)
            .unwrap();
        let single_rows = crate::evaluator::responses_from_samples(&single.responses);

        let gold_rows: Vec<crate::labeler::IdkExample> = items
            .iter()
            .map(|item| crate::labeler::IdkExample {
                question_id: item.id.clone(),
                prompt: item.question.clone(),
                response: String::new(),
                label: gold[&item.id],
                ik_threshold: 1.0,
            })
            .collect();
        let score = |rows: &[crate::evaluator::ResponseRow]| {
            let outcomes =
                crate::evaluator::classify(rows, &gold_rows, &items, &judge).unwrap();
            crate::evaluator::metrics(&outcomes).unwrap().truthful_rate
        };
        let bon_truthful = score(&bon10.response_rows());
        let single_truthful = score(&single_rows);
        assert!(
            bon_truthful >= single_truthful,
            "BoN {bon_truthful} < single {single_truthful}"
        );
        assert!(bon_truthful > 95.0, "BoN with n=10 should be near-perfect here");
    }

    #[test]
    fn deterministic_given_seeds() {
        let judge = JudgeConfig::default();
        let items = items(20);
        let backend = BackendSpec::Simulated(SimulatedModelSpec::with_correctness(0.4));
        let scorer = SimulatedScorer::Correctness {
            judge: judge.clone(),
        };
        let a = bon_run(&items, 5, &backend, &scorer, PromptTemplate::Plain, &judge, 3).unwrap();
        let b = bon_run(&items, 5, &backend, &scorer, PromptTemplate::Plain, &judge, 3).unwrap();
        assert_eq!(a.selections, b.selections);
    }

    proptest! {
        // Argmax is invariant under positive affine transformations.
        #[test]
        fn affine_invariance(
            scores in proptest::collection::vec(-100.0f64..100.0, 1..20),
            scale in 0.01f64..50.0,
            shift in -100.0f64..100.0,
        ) {
            let base = candidates(&scores);
            let transformed: Vec<Candidate> = base
                .iter()
                .map(|c| Candidate { response: c.response.clone(), score: scale * c.score + shift })
                .collect();
            prop_assert_eq!(select(&base).unwrap().0, select(&transformed).unwrap().0);
        }
    }
}
