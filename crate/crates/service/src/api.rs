use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use pod_sentry::diagnosis::{diagnose, DiagnosisError};
use pod_sentry::preprocess::{decode_rgb, encode_png, normalize_image};
use pod_sentry::{BackendError, Diagnosis};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use tower_http::services::ServeDir;

use crate::config::DEFAULT_BACKEND;
use crate::store::{Appended, FeedbackRecord, StoredCase, Verdict, CASE_SCHEMA, FEEDBACK_SCHEMA};
use crate::{AppState, ServiceError};

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    let ui = state.config.ui_dir.clone();
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/diagnose", post(diagnose_image))
        .route("/v1/cases/{id}", get(get_case))
        .route("/v1/cases/{id}/image", get(get_image))
        .route("/v1/cases/{id}/feedback", post(post_feedback))
        .route("/v1/eval/latest", get(latest_eval))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") }),
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    retriable: Option<bool>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), retriable: None }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        tracing::error!(error = %e, "internal failure");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        if e.is_upstream() {
            return Self {
                status: StatusCode::BAD_GATEWAY,
                code: "backend_failure",
                retriable: Some(e.is_retriable()),
                message: e.to_string(),
            };
        }
        match e {
            BackendError::UnknownImage(_) => Self::invalid(e.to_string()),
            other => Self::from(ServiceError::Config(other.to_string())),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    retriable: Option<bool>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body =
            ErrorBody { error: ErrorDetail { code: self.code, message: &self.message, retriable: self.retriable } };
        (self.status, json_response(&body)).into_response()
    }
}

fn json_response<T: Serialize>(v: &T) -> Response {
    let mut s = serde_json::to_string_pretty(v).expect("response serializes");
    s.push('\n');
    raw_json(s.into_bytes())
}

fn raw_json(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn health() -> Response {
    json_response(&serde_json::json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct DiagnoseQuery {
    image_id: Option<String>,
    backend: Option<String>,
}

#[derive(Serialize)]
struct DiagnoseResponse<'a> {
    case_id: &'a str,
    diagnosis: &'a Diagnosis,
}

async fn diagnose_image(
    State(app): State<Arc<AppState>>,
    Query(q): Query<DiagnoseQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    if body.is_empty() {
        return Err(ApiError::invalid("request body is empty; send the image bytes"));
    }
    let backend_name = q.backend.unwrap_or_else(|| DEFAULT_BACKEND.to_string());
    if !app.backends.contains_key(&backend_name) {
        return Err(ApiError::invalid(format!("unknown backend {backend_name:?}")));
    }
    if let Some(id) = &q.image_id {
        if id.is_empty() || id.len() > 256 {
            return Err(ApiError::invalid("image_id must be 1-256 characters"));
        }
    }
    let case_id = app.case_id(&body, q.image_id.as_deref(), &backend_name);
    let image_id = q.image_id.unwrap_or_else(|| case_id.clone());

    let app2 = Arc::clone(&app);
    let case = blocking(move || {
        if let Some(existing) = app2.store.load_case(&case_id)? {
            return Ok(existing);
        }
        let raster = decode_rgb(&body)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "undecodable_image", e.to_string()))?;
        let (processed, _) = normalize_image(&raster, None, app2.config.target_size)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "undecodable_image", e.to_string()))?;
        let named = &app2.backends[&backend_name];
        let dets = named.backend.detect(&image_id, &processed)?;
        let diagnosis =
            diagnose(&image_id, &dets, &app2.registry, &app2.kb, &app2.config.diagnose).map_err(|e| match e {
                DiagnosisError::UnknownClass(_) | DiagnosisError::Geometry(_) => ApiError {
                    status: StatusCode::BAD_GATEWAY,
                    code: "backend_failure",
                    message: format!("backend output rejected: {e}"),
                    retriable: Some(false),
                },
                other => ApiError::from(ServiceError::Knowledge(other)),
            })?;
        let case = StoredCase {
            schema: CASE_SCHEMA.to_string(),
            case_id: case_id.clone(),
            image_id,
            original: "original".into(),
            processed: "processed.png".into(),
            backend_name,
            backend: named.descriptor.clone(),
            created_at: now(),
            diagnosis,
        };
        Ok(app2.store.create_case(case, &body, &encode_png(&processed))?)
    })
    .await?;
    Ok(json_response(&DiagnoseResponse { case_id: &case.case_id, diagnosis: &case.diagnosis }))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Serialize)]
struct CaseView<'a> {
    case: &'a RawValue,
    feedback: Vec<FeedbackRecord>,
}

async fn get_case(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    blocking(move || {
        let bytes = app.store.case_bytes(&id)?.ok_or_else(|| ApiError::not_found("case"))?;
        let text = String::from_utf8(bytes).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        let raw =
            RawValue::from_string(text.trim_end().to_string()).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        let feedback = app.store.feedback(&id)?;
        Ok(json_response(&CaseView { case: &raw, feedback }))
    })
    .await
}

async fn get_image(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    blocking(move || {
        let png = app.store.processed_image(&id)?.ok_or_else(|| ApiError::not_found("case"))?;
        Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackRequest {
    verdict: Verdict,
    #[serde(default)]
    pod_index: Option<usize>,
    #[serde(default)]
    free_text: Option<String>,
    #[serde(default)]
    idempotency_key: Option<String>,
}

async fn post_feedback(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: FeedbackRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::invalid(format!("feedback body: {e}")))?;
    if req.free_text.as_ref().is_some_and(|t| t.len() > 4096) {
        return Err(ApiError::invalid("free_text exceeds 4096 bytes"));
    }
    blocking(move || {
        let case = app.store.load_case(&id)?.ok_or_else(|| ApiError::not_found("case"))?;
        if let Some(i) = req.pod_index {
            if i >= case.diagnosis.pods.len() {
                return Err(ApiError::invalid(format!(
                    "pod_index {i} out of range: case has {} pod(s)",
                    case.diagnosis.pods.len()
                )));
            }
        }
        let record = FeedbackRecord {
            schema: FEEDBACK_SCHEMA.to_string(),
            id: uuid::Uuid::new_v4().to_string(),
            case_id: case.case_id,
            image_id: case.image_id,
            submitted_at: now(),
            verdict: req.verdict,
            pod_index: req.pod_index,
            free_text: req.free_text,
            idempotency_key: req.idempotency_key,
        };
        Ok(match app.store.append_feedback(record)? {
            Appended::Created(r) => (StatusCode::CREATED, json_response(&r)).into_response(),
            Appended::Existing(r) => (StatusCode::OK, json_response(&r)).into_response(),
        })
    })
    .await
}

async fn latest_eval(State(app): State<Arc<AppState>>) -> Result<Response, ApiError> {
    blocking(move || {
        let bytes = app.store.latest_eval()?.ok_or_else(|| ApiError::not_found("evaluation report"))?;
        Ok(raw_json(bytes))
    })
    .await
}
