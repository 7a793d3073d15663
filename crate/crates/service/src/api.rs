//! HTTP/JSON routes.
//!
//! | method | path | auth |
//! |---|---|---|
//! | PUT  | `/studies/{id}` | admin |
//! | GET  | `/studies/{id}/annotators/{a}/next` | annotator |
//! | POST | `/studies/{id}/annotators/{a}/judgments` | annotator |
//! | GET  | `/studies/{id}/progress` | admin |
//! | GET  | `/studies/{id}/export` | admin |
//! | GET  | `/health` | none |
//!
//! Admin routes are open unless the server was given an admin token.
//! Errors are `{"code": ..., "message": ...}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::store::{ServiceError, StudyPayload, StudyStore};

#[derive(Clone)]
struct AppState {
    store: Arc<StudyStore>,
    admin_token: Option<Arc<str>>,
}

#[derive(Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stored_value: Option<u8>,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = match &e {
            ServiceError::InvalidStudyId(_) | ServiceError::InvalidPayload(_) | ServiceError::OutOfRange(_) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::UnknownStudy(_) | ServiceError::UnknownAnnotator(_) | ServiceError::UnknownPair(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::StudyExists(_) | ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::Corrupt(_) | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let stored_value = match &e {
            ServiceError::Conflict { stored, .. } => Some(*stored),
            _ => None,
        };
        let mut resp = (
            status,
            Json(ErrorBody {
                code: e.code(),
                message: e.to_string(),
                stored_value,
            }),
        )
            .into_response();
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut()
                .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

fn bad_json(r: JsonRejection) -> ApiError {
    ApiError(ServiceError::InvalidPayload(r.body_text()))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn check_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    match &state.admin_token {
        None => Ok(()),
        Some(t) if bearer(headers) == Some(t) => Ok(()),
        Some(_) => Err(ServiceError::Unauthorized.into()),
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
        .map_err(ApiError)
}

async fn put_study(
    State(state): State<AppState>,
    Path(study_id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<StudyPayload>, JsonRejection>,
) -> Result<Response, ApiError> {
    check_admin(&state, &headers)?;
    let Json(payload) = payload.map_err(bad_json)?;
    let store = state.store.clone();
    let out = blocking(move || store.create_study(&study_id, payload)).await?;
    let status = if out.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(out)).into_response())
}

async fn get_next(
    State(state): State<AppState>,
    Path((study_id, annotator)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    state.store.authorize(&study_id, &annotator, bearer(&headers))?;
    Ok(Json(state.store.next_pair(&study_id, &annotator)?).into_response())
}

#[derive(Deserialize)]
struct SubmitBody {
    pair_id: String,
    value: serde_json::Value,
}

async fn post_judgment(
    State(state): State<AppState>,
    Path((study_id, annotator)): Path<(String, String)>,
    headers: HeaderMap,
    body: Result<Json<SubmitBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    state.store.authorize(&study_id, &annotator, bearer(&headers))?;
    let Json(body) = body.map_err(bad_json)?;
    let store = state.store.clone();
    let out = blocking(move || store.submit(&study_id, &annotator, &body.pair_id, &body.value)).await?;
    Ok(Json(out).into_response())
}

async fn get_progress(
    State(state): State<AppState>,
    Path(study_id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    check_admin(&state, &headers)?;
    Ok(Json(state.store.progress(&study_id)?).into_response())
}

async fn get_export(
    State(state): State<AppState>,
    Path(study_id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    check_admin(&state, &headers)?;
    let csv = state.store.export(&study_id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(store: Arc<StudyStore>, admin_token: Option<String>) -> Router {
    let state = AppState {
        store,
        admin_token: admin_token.map(Arc::from),
    };
    Router::new()
        .route("/health", get(health))
        .route("/studies/{study_id}", put(put_study))
        .route("/studies/{study_id}/annotators/{annotator}/next", get(get_next))
        .route("/studies/{study_id}/annotators/{annotator}/judgments", post(post_judgment))
        .route("/studies/{study_id}/progress", get(get_progress))
        .route("/studies/{study_id}/export", get(get_export))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
