use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use manta_core::pipeline::{FailureKind, PipelineError, Stage, StageFailure};
use serde::Serialize;

/// Error body: `{"error": "...", "stage": "enhance", "run_id": "..."}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            error: message.into(),
            stage: None,
            run_id: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    /// A stage failure recorded in a run.
    pub fn from_failure(failure: &StageFailure, run_id: Option<String>) -> Self {
        let status = match failure.kind {
            FailureKind::Input => StatusCode::BAD_REQUEST,
            FailureKind::Busy => StatusCode::CONFLICT,
            FailureKind::Upstream => StatusCode::BAD_GATEWAY,
        };
        Self {
            status,
            error: failure.message.clone(),
            stage: Some(failure.stage),
            run_id,
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            PipelineError::UnknownRun(_) | PipelineError::UnknownImage { .. } => StatusCode::NOT_FOUND,
            PipelineError::Config(_) | PipelineError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}
