//! HTTP+JSON routes over a [`SessionService`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sketchdial_core::stroke::Polyline;

use crate::canvas::CanvasRendering;
use crate::error::ServiceError;
use crate::service::SessionService;
use crate::session::{AttentionView, ExportFile, InstructionResponse, SessionView};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedrawRequest {
    pub object_id: u64,
    pub polylines: Vec<Polyline>,
}

#[derive(Debug, Deserialize)]
pub struct AttentionQuery {
    pub turn: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{self}");
        }
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ServiceError>;

fn parse<T: DeserializeOwned + Default>(
    body: &Bytes,
    allow_empty: bool,
) -> Result<T, ServiceError> {
    if allow_empty && body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    Ok(serde_json::from_slice(body)?)
}

fn parse_required<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    Ok(serde_json::from_slice(body)?)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json),
        Err(e) => Err(ServiceError::Io(std::io::Error::other(e.to_string()))),
    }
}

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create))
        .route("/session/import", post(import))
        .route("/session/{id}", get(view))
        .route("/session/{id}/instruction", post(instruction))
        .route("/session/{id}/redraw", post(redraw))
        .route("/session/{id}/undo", post(undo))
        .route("/session/{id}/attention", get(attention))
        .route("/session/{id}/export", get(export))
        .with_state(service)
}

async fn health(State(svc): State<Arc<SessionService>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "sessions": svc.ids().len() }))
}

async fn create(State(svc): State<Arc<SessionService>>, body: Bytes) -> Response {
    let req: CreateRequest = match parse(&body, true) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match blocking(move || svc.create(req.seed)).await {
        Ok(v) => (StatusCode::CREATED, v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn view(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
) -> ApiResult<SessionView> {
    blocking(move || svc.view(&id)).await
}

async fn instruction(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<InstructionResponse> {
    let req: InstructionRequest = parse_required(&body)?;
    blocking(move || svc.instruction(&id, &req.text)).await
}

async fn redraw(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<CanvasRendering> {
    let req: RedrawRequest = parse_required(&body)?;
    blocking(move || svc.redraw(&id, req.object_id, req.polylines)).await
}

async fn undo(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
) -> ApiResult<SessionView> {
    blocking(move || svc.undo(&id)).await
}

async fn attention(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Query(q): Query<AttentionQuery>,
) -> ApiResult<AttentionView> {
    blocking(move || svc.attention(&id, q.turn)).await
}

async fn export(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
) -> ApiResult<ExportFile> {
    blocking(move || svc.export(&id)).await
}

async fn import(State(svc): State<Arc<SessionService>>, body: Bytes) -> Response {
    let file: ExportFile = match parse_required(&body) {
        Ok(f) => f,
        Err(e) => return e.into_response(),
    };
    match blocking(move || svc.import(file)).await {
        Ok(v) => (StatusCode::CREATED, v).into_response(),
        Err(e) => e.into_response(),
    }
}

/// Serves until ctrl-c.
pub async fn serve(
    service: Arc<SessionService>,
    addr: std::net::SocketAddr,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
