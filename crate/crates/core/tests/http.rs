use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine;
use manta_core::backend::{Backend, BackendConfig, BackendError, GeneratedImage};
use manta_core::llm::{count_tokens, Criterion, Gateway, LlmError, ProviderConfig, TokenLedger, Winner};
use manta_core::workflow::{AdapterRef, GenerationWorkflow};
use serde_json::{json, Value};

#[derive(Default)]
struct Fake {
    /// Canned (status, body) replies, served in order; the last one repeats.
    replies: VecDeque<(u16, Value)>,
    requests: Vec<(String, Option<String>, Value)>,
}

type Shared = Arc<Mutex<Fake>>;

async fn handle(State(state): State<Shared>, uri: Uri, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let mut fake = state.lock().unwrap();
    let auth = headers
        .get("authorization")
        .map(|v| v.to_str().unwrap().to_string());
    fake.requests.push((uri.path().to_string(), auth, body));
    let (status, reply) = if fake.replies.len() > 1 {
        fake.replies.pop_front().unwrap()
    } else {
        fake.replies.front().cloned().unwrap_or((200, json!({})))
    };
    (StatusCode::from_u16(status).unwrap(), Json(reply)).into_response()
}

/// A fake JSON server on a background runtime; every POST is recorded.
fn serve(replies: Vec<(u16, Value)>) -> (String, Shared) {
    let state: Shared = Arc::new(Mutex::new(Fake {
        replies: replies.into(),
        requests: Vec::new(),
    }));
    let app = Router::new().fallback(post(handle)).with_state(state.clone());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}"), state)
}

fn provider(endpoint: &str, retries: u32) -> ProviderConfig {
    ProviderConfig {
        endpoint: endpoint.into(),
        model_id: "test-model".into(),
        api_key_env: None,
        timeout_secs: 5.0,
        max_retries: retries,
        retry_backoff_ms: 1,
    }
}

fn chat(content: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
}

#[test]
fn completion_sends_bearer_key_from_env_and_charges_both_sides() {
    std::env::set_var("MANTA_TEST_HTTP_KEY", "sk-test-123");
    let (url, state) = serve(vec![(200, chat("three word reply"))]);
    let mut cfg = provider(&url, 0);
    cfg.api_key_env = Some("MANTA_TEST_HTTP_KEY".into());
    let gw = Gateway::from_config(&cfg).unwrap();
    let ledger = TokenLedger::unlimited();
    let reply = gw.complete("say something nice", &ledger).unwrap();
    assert_eq!(reply, "three word reply");
    assert_eq!(ledger.completion_tokens(), 3 + 3);
    let fake = state.lock().unwrap();
    let (path, auth, body) = &fake.requests[0];
    assert_eq!(path, "/chat/completions");
    assert_eq!(auth.as_deref(), Some("Bearer sk-test-123"));
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["content"], "say something nice");
}

#[test]
fn missing_key_variable_is_a_config_error() {
    let mut cfg = provider("http://127.0.0.1:9", 0);
    cfg.api_key_env = Some("MANTA_TEST_UNSET_VARIABLE".into());
    assert!(matches!(Gateway::from_config(&cfg), Err(LlmError::Config(_))));
}

#[test]
fn retries_on_server_errors_then_succeeds() {
    let (url, state) = serve(vec![
        (503, json!({"error": "busy"})),
        (429, json!({"error": "slow down"})),
        (200, chat("ok")),
    ]);
    let gw = Gateway::from_config(&provider(&url, 2)).unwrap();
    assert_eq!(gw.complete("hi", &TokenLedger::unlimited()).unwrap(), "ok");
    assert_eq!(state.lock().unwrap().requests.len(), 3);
}

#[test]
fn gives_up_after_max_retries_without_charging() {
    let (url, state) = serve(vec![(500, json!({"error": "boom"}))]);
    let gw = Gateway::from_config(&provider(&url, 1)).unwrap();
    let ledger = TokenLedger::unlimited();
    let err = gw.complete("hi", &ledger).unwrap_err();
    assert!(matches!(err, LlmError::Provider(ref m) if m.contains("500")), "{err}");
    assert_eq!(state.lock().unwrap().requests.len(), 2);
    assert_eq!(ledger.total(), 0);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, state) = serve(vec![(400, json!({"error": "bad"}))]);
    let gw = Gateway::from_config(&provider(&url, 3)).unwrap();
    assert!(gw.complete("hi", &TokenLedger::unlimited()).is_err());
    assert_eq!(state.lock().unwrap().requests.len(), 1);
}

#[test]
fn unreachable_endpoint_is_a_provider_error() {
    let gw = Gateway::from_config(&provider("http://127.0.0.1:9", 1)).unwrap();
    assert!(matches!(gw.complete("hi", &TokenLedger::unlimited()), Err(LlmError::Provider(_))));
}

#[test]
fn budget_is_checked_before_dispatch() {
    let (url, state) = serve(vec![(200, chat("ok"))]);
    let gw = Gateway::from_config(&provider(&url, 0)).unwrap();
    let ledger = TokenLedger::new(Some(3));
    let err = gw.complete("one two three four", &ledger).unwrap_err();
    assert!(matches!(err, LlmError::BudgetExceeded { projected: 4, budget: 3, .. }));
    assert!(state.lock().unwrap().requests.is_empty());
}

#[test]
fn embeddings_follow_returned_indexes() {
    let (url, state) = serve(vec![(
        200,
        json!({"data": [
            {"index": 1, "embedding": [0.0, 2.0]},
            {"index": 0, "embedding": [3.0, 4.0]}
        ]}),
    )]);
    let gw = Gateway::from_config(&provider(&url, 0)).unwrap();
    let ledger = TokenLedger::unlimited();
    let texts = vec!["first text".to_string(), "second".to_string()];
    let vs = gw.embed(&texts, &ledger).unwrap();
    assert_eq!(vs[0].values(), [3.0, 4.0]);
    assert_eq!(vs[1].values(), [0.0, 2.0]);
    assert_eq!(ledger.embedding_tokens(), texts.iter().map(|t| count_tokens(t)).sum::<u64>());
    let fake = state.lock().unwrap();
    assert_eq!(fake.requests[0].0, "/embeddings");
    assert_eq!(fake.requests[0].2["input"], json!(texts));
}

#[test]
fn ragged_embeddings_are_rejected() {
    let (url, _) = serve(vec![(200, json!({"data": [{"embedding": [1.0]}, {"embedding": [1.0, 2.0]}]}))]);
    let gw = Gateway::from_config(&provider(&url, 0)).unwrap();
    let err = gw.embed(&["a".into(), "b".into()], &TokenLedger::unlimited()).unwrap_err();
    assert!(matches!(err, LlmError::DimensionMismatch { .. }));
}

#[test]
fn judge_sends_images_and_parses_winner() {
    let (url, state) = serve(vec![(200, chat("Set B is more varied.\nWINNER: B"))]);
    let gw = Gateway::from_config(&provider(&url, 0)).unwrap();
    let img = |b: &[u8]| GeneratedImage {
        bytes: b.to_vec(),
        seed_used: 0,
        feature_vector: None,
    };
    let verdict = gw
        .judge_pair(&[img(b"\x89PNGa")], &[img(b"\x89PNGb"), img(b"P6 c")], Criterion::Diversity, "a cat", &TokenLedger::unlimited())
        .unwrap();
    assert_eq!(verdict.winner, Winner::B);
    assert_eq!(verdict.rationale, "Set B is more varied.");
    let fake = state.lock().unwrap();
    let content = fake.requests[0].2["messages"][0]["content"].as_array().unwrap().clone();
    assert_eq!(content.len(), 4);
    assert!(content[1]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
    assert!(content[3]["image_url"]["url"].as_str().unwrap().starts_with("data:image/x-portable-pixmap;base64,"));
}

fn workflow(checkpoint: &str) -> GenerationWorkflow {
    GenerationWorkflow {
        checkpoint_id: checkpoint.into(),
        adapters: vec![AdapterRef { id: "x".into(), weight: 0.5 }],
        positive_prompt: "a fox, <lora:x:0.5>".into(),
        negative_prompt: "blurry".into(),
        cfg_scale: 6.5,
        seed: 77,
        width: 512,
        height: 768,
        batch_size: 2,
    }
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn generation_reply() -> Value {
    json!({
        "images": [b64(b"\x89PNGone"), b64(b"\x89PNGtwo")],
        "info": "{\"all_seeds\": [77, 78]}"
    })
}

#[test]
fn txt2img_switches_checkpoint_once_and_maps_fields() {
    let (url, state) = serve(vec![(200, json!(null)), (200, generation_reply())]);
    let backend = Backend::from_config(&BackendConfig::http(url)).unwrap();
    let images = backend.txt2img(&workflow("ckpt-a")).unwrap();
    assert_eq!(images.len(), 2);
    assert_eq!(images[1].bytes, b"\x89PNGtwo");
    assert_eq!(images[1].seed_used, 78);
    assert!(images[0].feature_vector.is_none());
    backend.txt2img(&workflow("ckpt-a")).unwrap();
    let fake = state.lock().unwrap();
    let paths: Vec<_> = fake.requests.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(paths, ["/sdapi/v1/options", "/sdapi/v1/txt2img", "/sdapi/v1/txt2img"]);
    assert_eq!(fake.requests[0].2, json!({"sd_model_checkpoint": "ckpt-a"}));
    let body = &fake.requests[1].2;
    assert_eq!(body["prompt"], "a fox, <lora:x:0.5>");
    assert_eq!(body["negative_prompt"], "blurry");
    assert_eq!(body["cfg_scale"], 6.5);
    assert_eq!(body["seed"], 77);
    assert_eq!((body["width"].as_u64(), body["height"].as_u64()), (Some(512), Some(768)));
    assert_eq!(body["batch_size"], 2);
}

#[test]
fn img2img_sends_init_image_and_denoise() {
    let (url, state) = serve(vec![(200, json!(null)), (200, json!({"images": [b64(b"\x89PNGref")]}))]);
    let backend = Backend::from_config(&BackendConfig::http(url)).unwrap();
    let source = GeneratedImage {
        bytes: b"\x89PNGsource".to_vec(),
        seed_used: 1,
        feature_vector: None,
    };
    let out = backend.img2img(&source, &workflow("ckpt-b"), 0.35).unwrap();
    assert_eq!(out[0].bytes, b"\x89PNGref");
    assert_eq!(out[0].seed_used, 77);
    let fake = state.lock().unwrap();
    assert_eq!(fake.requests[1].0, "/sdapi/v1/img2img");
    assert_eq!(fake.requests[1].2["init_images"], json!([b64(b"\x89PNGsource")]));
    assert_eq!(fake.requests[1].2["denoising_strength"], 0.35);
}

#[test]
fn unknown_checkpoint_is_model_not_found() {
    let (url, state) = serve(vec![(404, json!({"detail": "Model not found"}))]);
    let backend = Backend::from_config(&BackendConfig::http(url)).unwrap();
    assert_eq!(
        backend.txt2img(&workflow("ghost")).unwrap_err(),
        BackendError::ModelNotFound("ghost".into())
    );
    assert_eq!(state.lock().unwrap().requests.len(), 1);
}

#[test]
fn server_failures_and_unreachable_backend() {
    let (url, _) = serve(vec![(200, json!(null)), (500, json!({"error": "oom"}))]);
    let backend = Backend::from_config(&BackendConfig::http(url)).unwrap();
    assert!(matches!(backend.txt2img(&workflow("a")), Err(BackendError::BackendUnavailable(_))));
    let dead = Backend::from_config(&BackendConfig::http("http://127.0.0.1:9")).unwrap();
    assert!(matches!(dead.txt2img(&workflow("a")), Err(BackendError::BackendUnavailable(_))));
}

#[test]
fn garbage_images_are_invalid_responses() {
    let (url, _) = serve(vec![(200, json!(null)), (200, json!({"images": ["***not base64***"]}))]);
    let backend = Backend::from_config(&BackendConfig::http(url)).unwrap();
    assert!(matches!(backend.txt2img(&workflow("a")), Err(BackendError::InvalidResponse(_))));
}
