//! Batch client for chat-completions endpoints: bounded in-flight requests,
//! exponential backoff retries, bearer-token auth.
//!
//! Transport and server errors are retried up to the configured budget and
//! then recorded as per-slot failures so the run can continue;
//! authentication failures abort the whole run immediately.

use super::{BackendKind, InferenceError, SampledResponse, SamplingParams, SlotError, SlotRequest};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Environment variable holding the bearer token for remote endpoints.
pub const API_KEY_ENV: &str = "IDK_API_KEY";

fn default_concurrency() -> usize {
    8
}

fn default_max_retries() -> u32 {
    3
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_backoff_ms() -> u64 {
    250
}

/// A chat-completions endpoint plus client policy knobs.
///
/// The API key is never serialized; it is resolved from `IDK_API_KEY` (or
/// set programmatically) at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub url: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    /// In-flight request cap.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Retries after the first attempt for retryable errors.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Base backoff; attempt `n` sleeps `backoff_ms << n`.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl EndpointSpec {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key: None,
            concurrency: default_concurrency(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            backoff_ms: default_backoff_ms(),
        }
    }

    /// Fill `api_key` from `IDK_API_KEY` when unset.
    pub fn with_env_api_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(API_KEY_ENV).ok();
        }
        self
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

enum SlotOutcome {
    Ok(SampledResponse),
    Failed {
        question_id: String,
        sample_index: u32,
        error: String,
    },
    AuthFailed(String),
}

/// Fill every slot against the endpoint. Returns successful responses plus
/// `(question_id, sample_index, error)` tuples for slots that exhausted
/// their retry budget.
pub(crate) fn run_batch(
    endpoint: &EndpointSpec,
    slots: &[SlotRequest],
    params: &SamplingParams,
) -> Result<(Vec<SampledResponse>, Vec<SlotError>), InferenceError> {
    if slots.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| InferenceError::Runtime(e.to_string()))?;
    runtime.block_on(run_batch_async(endpoint, slots, params))
}

async fn run_batch_async(
    endpoint: &EndpointSpec,
    slots: &[SlotRequest],
    params: &SamplingParams,
) -> Result<(Vec<SampledResponse>, Vec<SlotError>), InferenceError> {
    let client = reqwest::Client::builder()
        .timeout(Duration::from_secs(endpoint.timeout_secs))
        .build()
        .map_err(|e| InferenceError::Runtime(e.to_string()))?;

    let mut stream = stream::iter(slots.iter().map(|slot| {
        let client = client.clone();
        async move { fill_slot(&client, endpoint, slot, params).await }
    }))
    .buffer_unordered(endpoint.concurrency.max(1));

    let mut responses = Vec::with_capacity(slots.len());
    let mut failures = Vec::new();
    while let Some(outcome) = stream.next().await {
        match outcome {
            SlotOutcome::Ok(r) => responses.push(r),
            SlotOutcome::Failed {
                question_id,
                sample_index,
                error,
            } => failures.push((question_id, sample_index, error)),
            // Dropping the stream cancels everything still in flight.
            SlotOutcome::AuthFailed(message) => {
                return Err(InferenceError::Auth {
                    url: endpoint.url.clone(),
                    message,
                })
            }
        }
    }
    Ok((responses, failures))
}

async fn fill_slot(
    client: &reqwest::Client,
    endpoint: &EndpointSpec,
    slot: &SlotRequest,
    params: &SamplingParams,
) -> SlotOutcome {
    let body = ChatRequest {
        model: &endpoint.model,
        messages: [ChatMessage {
            role: "user",
            content: &slot.prompt,
        }],
        temperature: params.temperature,
        top_p: params.top_p,
        max_tokens: params.max_new_tokens,
    };

    let mut last_error = String::new();
    for attempt in 0..=endpoint.max_retries {
        if attempt > 0 {
            let delay = endpoint.backoff_ms.saturating_mul(1 << (attempt - 1));
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
        let mut request = client.post(&endpoint.url).json(&body);
        if let Some(key) = &endpoint.api_key {
            request = request.bearer_auth(key);
        }
        match request.send().await {
            Ok(response) => {
                let status = response.status();
                if status == reqwest::StatusCode::UNAUTHORIZED
                    || status == reqwest::StatusCode::FORBIDDEN
                {
                    return SlotOutcome::AuthFailed(format!("http {status}"));
                }
                if status.is_success() {
                    match response.json::<ChatResponse>().await {
                        Ok(parsed) => {
                            let content = parsed
                                .choices
                                .into_iter()
                                .next()
                                .and_then(|c| c.message.content)
                                .unwrap_or_default();
                            return SlotOutcome::Ok(SampledResponse {
                                question_id: slot.item.id.clone(),
                                sample_index: slot.sample_index,
                                response: content,
                                backend: BackendKind::Remote,
                            });
                        }
                        Err(e) => {
                            last_error = format!("bad response body: {e}");
                            continue;
                        }
                    }
                }
                last_error = format!("http {status}");
                if status.is_client_error()
                    && status != reqwest::StatusCode::TOO_MANY_REQUESTS
                    && status != reqwest::StatusCode::REQUEST_TIMEOUT
                {
                    break; // the request itself is bad; retrying cannot help
                }
            }
            Err(e) => {
                last_error = format!("transport: {e}");
            }
        }
    }
    SlotOutcome::Failed {
        question_id: slot.item.id.clone(),
        sample_index: slot.sample_index,
        error: last_error,
    }
}
