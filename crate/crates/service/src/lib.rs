//! JSON HTTP API over [`manta_core::Pipeline`].
//!
//! Pipeline work is blocking (HTTP clients, backend queue), so every call
//! runs on the blocking pool. When the backend already has
//! `service.async_threshold` requests pending, `generate` and `refine`
//! answer 202 with a poll URL instead of holding the connection.

mod error;
pub mod openapi;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use manta_core::llm::Criterion;
use manta_core::pipeline::{RunRecord, SystemMode};
use manta_core::{Pipeline, RunRequest};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;
use tracing::info;

pub use error::ApiError;

/// Images up to this size are inlined as base64 in run responses.
pub const INLINE_IMAGE_LIMIT: usize = 256 * 1024;

enum Job {
    Pending,
    Done(Value),
    Failed(ApiError),
}

struct AppState {
    pipeline: Arc<Pipeline>,
    jobs: Mutex<HashMap<String, Job>>,
    job_seq: AtomicU64,
}

type Shared = Arc<AppState>;

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    let ui_dir = pipeline.config().service.ui_dir.clone();
    let state = Arc::new(AppState {
        pipeline,
        jobs: Mutex::new(HashMap::new()),
        job_seq: AtomicU64::new(0),
    });
    let api = Router::new()
        .route("/v1/spec", get(spec))
        .route("/v1/compose", post(compose))
        .route("/v1/generate", post(generate))
        .route("/v1/refine", post(refine))
        .route("/v1/jobs/{id}", get(job))
        .route("/v1/runs", get(list_runs))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/runs/{id}/images/{index}", get(get_image))
        .route("/v1/collections", get(collections))
        .route("/v1/evaluate", post(evaluate))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.nest_service("/ui", ServeDir::new(dir)),
        None => api
            .route("/ui", get(ui_missing))
            .route("/ui/{*path}", get(ui_missing)),
    }
}

/// Bind and serve until ctrl-c.
pub async fn serve(pipeline: Arc<Pipeline>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(pipeline))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn ui_missing() -> ApiError {
    ApiError::not_found("no ui directory configured (service.ui_dir)")
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn spec() -> Json<Value> {
    Json(openapi::document())
}

fn compose_body(record: &RunRecord) -> Value {
    json!({
        "concept_map": record.concept_map,
        "selection": record.selection,
        "retrieval": record.retrieval,
        "workflow": record.workflow,
        "tokens": record.ledger_snapshot,
        "timings": record.timings,
    })
}

#[derive(Serialize)]
struct ImageView {
    index: usize,
    seed_used: i64,
    content_type: &'static str,
    url: String,
    data: Option<String>,
}

fn run_body(record: &RunRecord) -> Value {
    let images: Vec<ImageView> = record
        .images
        .iter()
        .enumerate()
        .map(|(index, img)| ImageView {
            index,
            seed_used: img.seed_used,
            content_type: img.content_type(),
            url: format!("/v1/runs/{}/images/{index}", record.request_id),
            data: (img.bytes.len() <= INLINE_IMAGE_LIMIT)
                .then(|| base64::engine::general_purpose::STANDARD.encode(&img.bytes)),
        })
        .collect();
    json!({
        "run_id": record.request_id,
        "parent_id": record.parent_id,
        "images": images,
        "workflow": record.workflow,
        "concept_map": record.concept_map,
        "selection": record.selection,
        "retrieval": record.retrieval,
        "tokens": record.ledger_snapshot,
    })
}

fn finished(record: RunRecord) -> Result<Value, ApiError> {
    match &record.failure {
        Some(f) => Err(ApiError::from_failure(f, Some(record.request_id.clone()))),
        None => Ok(run_body(&record)),
    }
}

async fn compose(State(state): State<Shared>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: RunRequest = parse(&body)?;
    let pipeline = state.pipeline.clone();
    let record = blocking(move || Ok(pipeline.compose(&req)?)).await?;
    match &record.failure {
        Some(f) => Err(ApiError::from_failure(f, None)),
        None => Ok(Json(compose_body(&record))),
    }
}

/// Run `work` inline, or as a background job when the backend queue is busy.
async fn dispatch(
    state: Shared,
    work: impl FnOnce(&Pipeline) -> Result<RunRecord, ApiError> + Send + 'static,
) -> Response {
    let pipeline = state.pipeline.clone();
    let threshold = pipeline.config().service.async_threshold;
    if pipeline.backend().pending() < threshold {
        return match blocking(move || work(&pipeline)).await.and_then(finished) {
            Ok(v) => Json(v).into_response(),
            Err(e) => e.into_response(),
        };
    }
    let job_id = format!("job-{:06}", state.job_seq.fetch_add(1, Ordering::SeqCst) + 1);
    state.jobs.lock().unwrap().insert(job_id.clone(), Job::Pending);
    let id = job_id.clone();
    let state_bg = state.clone();
    tokio::spawn(async move {
        let outcome = blocking(move || work(&pipeline)).await.and_then(finished);
        let job = match outcome {
            Ok(v) => Job::Done(v),
            Err(e) => Job::Failed(e),
        };
        state_bg.jobs.lock().unwrap().insert(id, job);
    });
    accepted(&job_id)
}

fn accepted(job_id: &str) -> Response {
    let poll = format!("/v1/jobs/{job_id}");
    (
        StatusCode::ACCEPTED,
        [(header::LOCATION, poll.clone())],
        Json(json!({"job_id": job_id, "status": "pending", "poll": poll})),
    )
        .into_response()
}

async fn generate(State(state): State<Shared>, body: Bytes) -> Response {
    let mut req: RunRequest = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    req.persist = true;
    dispatch(state, move |p| Ok(p.run(&req)?)).await
}

#[derive(Deserialize)]
struct RefineBody {
    run_id: String,
    image_index: usize,
    #[serde(default)]
    denoise: Option<f64>,
}

async fn refine(State(state): State<Shared>, body: Bytes) -> Response {
    let req: RefineBody = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    // Unknown parents are reported synchronously even when the queue is busy.
    let pipeline = state.pipeline.clone();
    let run_id = req.run_id.clone();
    if let Err(e) = blocking(move || Ok(pipeline.get_run(&run_id)?)).await {
        return e.into_response();
    }
    dispatch(state, move |p| Ok(p.refine(&req.run_id, req.image_index, req.denoise)?)).await
}

async fn job(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let jobs = state.jobs.lock().unwrap();
    match jobs.get(&id) {
        None => ApiError::not_found(format!("unknown job `{id}`")).into_response(),
        Some(Job::Pending) => accepted(&id),
        Some(Job::Done(v)) => Json(v.clone()).into_response(),
        Some(Job::Failed(e)) => e.clone().into_response(),
    }
}

async fn list_runs(State(state): State<Shared>) -> Result<Json<Vec<Value>>, ApiError> {
    let pipeline = state.pipeline.clone();
    let runs = blocking(move || Ok(pipeline.runs()?)).await?;
    Ok(Json(
        runs.iter()
            .map(|r| {
                json!({
                    "run_id": r.request_id,
                    "sequence": r.sequence,
                    "kind": r.kind,
                    "parent_id": r.parent_id,
                    "input_prompt": r.input_prompt,
                    "image_count": r.images.len(),
                    "failure": r.failure,
                })
            })
            .collect(),
    ))
}

async fn get_run(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<RunRecord>, ApiError> {
    let pipeline = state.pipeline.clone();
    Ok(Json(blocking(move || Ok(pipeline.get_run(&id)?)).await?))
}

async fn get_image(
    State(state): State<Shared>,
    Path((id, index)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let index: usize = index
        .parse()
        .map_err(|_| ApiError::not_found(format!("run `{id}` has no image {index}")))?;
    let pipeline = state.pipeline.clone();
    let image = blocking(move || Ok(pipeline.image(&id, index)?)).await?;
    Ok(([(header::CONTENT_TYPE, image.content_type())], Body::from(image.bytes)).into_response())
}

async fn collections(State(state): State<Shared>) -> Json<Vec<Value>> {
    let p = &state.pipeline;
    Json(
        [p.checkpoints(), p.adapters()]
            .into_iter()
            .flatten()
            .map(|c| serde_json::to_value(c.stats()).expect("stats serialize"))
            .collect(),
    )
}

#[derive(Deserialize)]
struct EvaluateBody {
    prompts: Vec<String>,
    against: String,
    #[serde(default)]
    criteria: Option<Vec<Criterion>>,
}

async fn evaluate(State(state): State<Shared>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: EvaluateBody = parse(&body)?;
    let against: SystemMode = req.against.parse().map_err(ApiError::bad_request)?;
    if against == SystemMode::Full {
        return Err(ApiError::bad_request("cannot evaluate the full system against itself"));
    }
    if req.prompts.is_empty() {
        return Err(ApiError::bad_request("no prompts"));
    }
    let criteria = req.criteria.unwrap_or_else(|| Criterion::ALL.to_vec());
    if criteria.is_empty() {
        return Err(ApiError::bad_request("no criteria"));
    }
    let pipeline = state.pipeline.clone();
    let run = blocking(move || Ok(pipeline.evaluate(&req.prompts, against, &criteria))).await?;
    Ok(Json(run.to_json()))
}
