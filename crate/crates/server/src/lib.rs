//! HTTP front end for [`geobench::session::SessionEngine`].
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | multipart: `image` file, optional `truth` (JSON), optional `clue_template` |
//! | POST | `/sessions/{id}/feedback` | `{"kind": "correction"\|"clue"\|"question", "text": "...", "answer": "..."}` |
//! | POST | `/sessions/{id}/retry` | none |
//! | POST | `/sessions/{id}/close` | none |
//! | GET | `/sessions/{id}` | |
//! | GET | `/sessions/{id}/score` | |
//! | GET | `/healthz` | |
//!
//! Errors are `{"code": "...", "message": "..."}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

use geobench::sample::Truth;
use geobench::session::{Feedback, Session, SessionEngine, SessionError, SessionTurn};

const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<SessionEngine>,
    /// Uploaded images are stored here.
    pub upload_dir: PathBuf,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Closed(_) => StatusCode::CONFLICT,
            SessionError::Invalid(_) => StatusCode::BAD_REQUEST,
            SessionError::NoTruth(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

#[derive(Serialize)]
struct TurnResponse {
    session_id: String,
    turn: SessionTurn,
}

fn last_turn(s: &Session) -> TurnResponse {
    TurnResponse {
        session_id: s.session_id.clone(),
        turn: s.turns.last().cloned().expect("sessions always hold a turn"),
    }
}

/// Runs a blocking engine call off the async runtime.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

fn extension_of(name: Option<&str>) -> String {
    name.and_then(|n| std::path::Path::new(n).extension())
        .and_then(|e| e.to_str())
        .filter(|e| e.len() <= 5 && e.chars().all(|c| c.is_ascii_alphanumeric()))
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_else(|| "img".into())
}

async fn create_session(State(st): State<AppState>, mut form: Multipart) -> Result<Response, ApiError> {
    let mut image: Option<(Vec<u8>, String)> = None;
    let mut truth: Option<Truth> = None;
    let mut clue_template = false;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let name = field.name().unwrap_or("").to_string();
        match name.as_str() {
            "image" => {
                let ext = extension_of(field.file_name());
                let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                image = Some((bytes.to_vec(), ext));
            }
            "truth" => {
                let text = field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                truth = Some(serde_json::from_str(&text).map_err(|e| ApiError::bad_request(format!("truth: {e}")))?);
            }
            "clue_template" => {
                let text = field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
                clue_template = matches!(text.trim(), "1" | "true" | "yes");
            }
            other => return Err(ApiError::bad_request(format!("unexpected field {other:?}"))),
        }
    }
    let (bytes, ext) = image.ok_or_else(|| ApiError::bad_request("missing image field"))?;
    if bytes.is_empty() {
        return Err(ApiError::bad_request("image is empty"));
    }
    let id = uuid::Uuid::new_v4().to_string();
    std::fs::create_dir_all(&st.upload_dir).map_err(|e| ApiError::internal(e.to_string()))?;
    let path = st.upload_dir.join(format!("{id}.{ext}"));
    std::fs::write(&path, &bytes).map_err(|e| ApiError::internal(e.to_string()))?;
    let engine = st.engine.clone();
    let image_path = path.display().to_string();
    let s = blocking(move || engine.open_with_id(&id, &image_path, truth, clue_template)).await?;
    Ok((StatusCode::CREATED, Json(last_turn(&s))).into_response())
}

async fn feedback(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Feedback>, JsonRejection>,
) -> Result<Json<TurnResponse>, ApiError> {
    let Json(fb) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let engine = st.engine.clone();
    let s = blocking(move || engine.submit_feedback(&id, fb)).await?;
    Ok(Json(last_turn(&s)))
}

async fn retry(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<TurnResponse>, ApiError> {
    let engine = st.engine.clone();
    let s = blocking(move || engine.retry(&id)).await?;
    Ok(Json(last_turn(&s)))
}

async fn close(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    let engine = st.engine.clone();
    let s = blocking(move || engine.close(&id)).await?;
    Ok(Json((*s).clone()))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    Ok(Json((*st.engine.get(&id)?).clone()))
}

async fn score(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let trajectory = st.engine.score(&id)?;
    Ok(Json(json!({"session_id": id, "trajectory": trajectory})).into_response())
}

async fn healthz(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "backend": st.engine.backend_id()}))
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such route".into(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/score", get(score))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/retry", post(retry))
        .route("/sessions/{id}/close", post(close))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// Binds `addr` and serves until the process receives Ctrl-C. `on_bound`
/// receives the actual address, useful with port 0.
pub async fn serve(addr: SocketAddr, state: AppState, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
