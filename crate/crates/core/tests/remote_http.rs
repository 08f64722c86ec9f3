//! Exercises the remote chat-completions backend and the remote scorer
//! against a local mock server: happy path, retry/backoff, per-item failure
//! records, auth aborts, and resume behavior.

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use idk_core::bon::{self, RemoteScorer, RemoteScorerSpec};
use idk_core::corpus::{PromptTemplate, QaItem};
use idk_core::inference::{self, BackendKind, BackendSpec, EndpointSpec, InferenceError, SamplingParams};
use idk_core::judge::JudgeConfig;
use serde_json::json;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

type Hits = Arc<Mutex<HashMap<String, usize>>>;

#[derive(Clone)]
struct ServerState {
    hits: Hits,
    require_auth: bool,
}

async fn chat_handler(
    State(state): State<ServerState>,
    headers: HeaderMap,
    Json(body): Json<serde_json::Value>,
) -> (StatusCode, Json<serde_json::Value>) {
    if state.require_auth {
        let authed = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(|v| v == "Bearer sekrit")
            .unwrap_or(false);
        if !authed {
            return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad token"})));
        }
    }
    let prompt = body["messages"][0]["content"].as_str().unwrap_or("").to_string();
    let attempt = {
        let mut hits = state.hits.lock().unwrap();
        let counter = hits.entry(prompt.clone()).or_insert(0);
        *counter += 1;
        *counter
    };
    if prompt.contains("ALWAYS-FAIL") {
        return (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": "boom"})),
        );
    }
    if prompt.contains("FLAKY") && attempt < 3 {
        return (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": "flaky"})),
        );
    }
    (
        StatusCode::OK,
        Json(json!({
            "choices": [{"message": {"role": "assistant", "content": format!("echo: {prompt}")}}]
        })),
    )
}

async fn score_handler(
    State(state): State<ServerState>,
    Json(body): Json<serde_json::Value>,
) -> (StatusCode, Json<serde_json::Value>) {
    let response = body["response"].as_str().unwrap_or("").to_string();
    let attempt = {
        let mut hits = state.hits.lock().unwrap();
        let counter = hits.entry(response.clone()).or_insert(0);
        *counter += 1;
        *counter
    };
    if response.contains("ALWAYS-FAIL") {
        return (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": "boom"})),
        );
    }
    if response.contains("FLAKY") && attempt < 2 {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
    }
    (
        StatusCode::OK,
        Json(json!({"score": response.len() as f64})),
    )
}

/// Start the mock server on a background runtime thread; returns the base
/// URL and the per-prompt request counters.
fn start_server(require_auth: bool) -> (String, Hits) {
    let hits: Hits = Arc::new(Mutex::new(HashMap::new()));
    let state = ServerState {
        hits: Arc::clone(&hits),
        require_auth,
    };
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().unwrap();
        runtime.block_on(async move {
            let app = Router::new()
                .route("/v1/chat/completions", post(chat_handler))
                .route("/score", post(score_handler))
                .with_state(state);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}"), hits)
}

fn endpoint(base: &str) -> EndpointSpec {
    let mut spec = EndpointSpec::new(format!("{base}/v1/chat/completions"), "mock-model");
    spec.backoff_ms = 1;
    spec
}

fn item(id: &str, question: &str) -> QaItem {
    QaItem::new(id, question, vec!["gold".into()], "test").unwrap()
}

fn params(k: u32) -> SamplingParams {
    SamplingParams {
        num_samples: k,
        ..SamplingParams::default()
    }
}

#[test]
fn happy_path_fills_every_slot_in_canonical_order() {
    let (base, _) = start_server(false);
    let items = vec![item("b", "Beta?"), item("a", "Alpha?"), item("c", "Gamma?")];
    let judge = JudgeConfig::default();
    let run = inference::sample(
        &items,
        &params(2),
        &BackendSpec::Remote(endpoint(&base)),
        PromptTemplate::Plain,
        &judge,
    )
    .unwrap();
    assert!(run.failures.is_empty());
    assert_eq!(run.responses.len(), 6);
    let keys: Vec<(String, u32)> = run
        .responses
        .iter()
        .map(|r| (r.question_id.clone(), r.sample_index))
        .collect();
    assert_eq!(
        keys,
        vec![
            ("a".into(), 0),
            ("a".into(), 1),
            ("b".into(), 0),
            ("b".into(), 1),
            ("c".into(), 0),
            ("c".into(), 1)
        ]
    );
    assert!(run
        .responses
        .iter()
        .all(|r| r.backend == BackendKind::Remote));
    let alpha = run.responses.iter().find(|r| r.question_id == "a").unwrap();
    assert_eq!(alpha.response, "echo: Alpha?");
}

#[test]
fn transient_errors_are_retried_until_success() {
    let (base, hits) = start_server(false);
    let items = vec![item("q", "FLAKY question?")];
    let judge = JudgeConfig::default();
    let run = inference::sample(
        &items,
        &params(1),
        &BackendSpec::Remote(endpoint(&base)),
        PromptTemplate::Plain,
        &judge,
    )
    .unwrap();
    assert!(run.failures.is_empty());
    assert_eq!(run.responses[0].response, "echo: FLAKY question?");
    assert_eq!(hits.lock().unwrap()["FLAKY question?"], 3);
}

#[test]
fn exhausted_retries_record_item_failure_and_run_continues() {
    let (base, hits) = start_server(false);
    let items = vec![item("bad", "ALWAYS-FAIL?"), item("good", "Fine?")];
    let judge = JudgeConfig::default();
    let run = inference::sample(
        &items,
        &params(1),
        &BackendSpec::Remote(endpoint(&base)),
        PromptTemplate::Plain,
        &judge,
    )
    .unwrap();
    assert_eq!(run.responses.len(), 1);
    assert_eq!(run.responses[0].question_id, "good");
    assert_eq!(run.failures.len(), 1);
    assert_eq!(run.failures[0].question_id, "bad");
    assert_eq!(run.failures[0].missing_indices, vec![0]);
    assert!(run.failures[0].error.contains("500"));
    // 1 initial attempt + 3 retries.
    assert_eq!(hits.lock().unwrap()["ALWAYS-FAIL?"], 4);
}

#[test]
fn auth_failure_aborts_the_run() {
    let (base, _) = start_server(true);
    let items = vec![item("q", "Secret?")];
    let judge = JudgeConfig::default();
    let err = inference::sample(
        &items,
        &params(1),
        &BackendSpec::Remote(endpoint(&base)),
        PromptTemplate::Plain,
        &judge,
    )
    .unwrap_err();
    assert!(matches!(err, InferenceError::Auth { .. }));

    let mut authed = endpoint(&base);
    authed.api_key = Some("sekrit".to_string());
    let run = inference::sample(
        &items,
        &params(1),
        &BackendSpec::Remote(authed),
        PromptTemplate::Plain,
        &judge,
    )
    .unwrap();
    assert_eq!(run.responses.len(), 1);
}

#[test]
fn resume_only_requests_missing_slots() {
    let (base, hits) = start_server(false);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.jsonl");
    let items = vec![item("a", "First?"), item("b", "Second?")];
    let judge = JudgeConfig::default();
    let backend = BackendSpec::Remote(endpoint(&base));

    let full = inference::sample(&items, &params(2), &backend, PromptTemplate::Plain, &judge)
        .unwrap();
    assert_eq!(full.responses.len(), 4);
    let baseline_first = hits.lock().unwrap()["First?"];

    // Drop one slot of question b and resume.
    let partial: Vec<_> = full
        .responses
        .iter()
        .filter(|r| !(r.question_id == "b" && r.sample_index == 1))
        .cloned()
        .collect();
    inference::write_samples(&path, &partial).unwrap();
    let resumed =
        inference::resume(&path, &items, &params(2), &backend, PromptTemplate::Plain, &judge)
            .unwrap();
    assert_eq!(resumed.newly_sampled, 1);
    assert_eq!(resumed.responses.len(), 4);
    // The completed question was never re-requested.
    assert_eq!(hits.lock().unwrap()["First?"], baseline_first);
}

#[test]
fn remote_scorer_picks_argmax_and_retries_transients() {
    let (base, hits) = start_server(false);
    let scorer = {
        let mut spec = RemoteScorerSpec::new(format!("{base}/score"));
        spec.backoff_ms = 1;
        RemoteScorer::new(spec).unwrap()
    };
    // The mock scorer returns the response length.
    let q = item("q", "What?");
    let score = |resp: &str| {
        use idk_core::bon::RewardSource;
        scorer.score(&q, "What?", resp).unwrap()
    };
    assert_eq!(score("abc"), 3.0);
    assert_eq!(score("FLAKY but fine"), 14.0);
    assert_eq!(hits.lock().unwrap()["FLAKY but fine"], 2);

    use idk_core::bon::RewardSource;
    let err = scorer.score(&q, "What?", "ALWAYS-FAIL").unwrap_err();
    assert!(matches!(err, bon::BonError::Scorer(_)));
}
