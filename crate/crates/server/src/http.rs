//! HTTP + JSON surface over the coordinator.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use mqa_core::Framework;
use serde::Deserialize;
use serde_json::json;

use crate::config::SystemConfig;
use crate::coordinator::{Coordinator, QueryRequest};
use crate::error::{ConfigError, ServiceError};

pub const LISTEN_ADDR_VAR: &str = "MQA_LISTEN_ADDR";
pub const DEFAULT_LISTEN_ADDR: &str = "127.0.0.1:8080";
const BODY_LIMIT: usize = 32 * 1024 * 1024;

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body of /api/query and /api/compare.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct QueryBody {
    session_id: Option<String>,
    text: Option<String>,
    selected_id: Option<String>,
    image_base64: Option<String>,
    k: Option<usize>,
    l: Option<usize>,
    framework: Option<Framework>,
    weights: Option<Vec<f64>>,
    /// compare only: also compute the exact top-k and per-framework recall
    ground_truth: bool,
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.trim().is_empty())
}

impl QueryBody {
    fn into_request(self) -> Result<(Option<String>, QueryRequest, bool), ServiceError> {
        let image = match non_empty(self.image_base64) {
            Some(b64) => Some(
                base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| ServiceError::invalid_request(format!("image_base64: {e}")))?,
            ),
            None => None,
        };
        let request = QueryRequest {
            text: non_empty(self.text),
            image,
            selected_id: non_empty(self.selected_id),
            k: self.k,
            l: self.l,
            framework: self.framework,
            weights: self.weights,
        };
        Ok((non_empty(self.session_id), request, self.ground_truth))
    }
}

fn is_multipart(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"))
}

async fn read_query(req: Request) -> Result<QueryBody, ServiceError> {
    if !is_multipart(req.headers()) {
        let bytes = Bytes::from_request(req, &())
            .await
            .map_err(|e| ServiceError::invalid_request(e.body_text()))?;
        return serde_json::from_slice(&bytes).map_err(|e| ServiceError::invalid_request(format!("request body: {e}")));
    }
    let mut multipart = Multipart::from_request(req, &())
        .await
        .map_err(|e| ServiceError::invalid_request(e.body_text()))?;
    let mut body = QueryBody::default();
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::invalid_request(e.body_text());
    while let Some(field) = multipart.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        if name == "image" {
            let bytes = field.bytes().await.map_err(bad)?;
            if !bytes.is_empty() {
                body.image_base64 = Some(base64::engine::general_purpose::STANDARD.encode(&bytes));
            }
            continue;
        }
        let text = field.text().await.map_err(bad)?;
        let number = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| ServiceError::invalid_request(format!("{name}: not a positive integer")))
        };
        match name.as_str() {
            "session_id" => body.session_id = Some(text),
            "text" => body.text = Some(text),
            "selected_id" => body.selected_id = Some(text),
            "k" => body.k = Some(number(&text)?),
            "l" => body.l = Some(number(&text)?),
            "framework" => body.framework = Some(text.parse().map_err(ServiceError::from)?),
            "weights" => {
                body.weights = Some(
                    serde_json::from_str(&text)
                        .map_err(|e| ServiceError::invalid_request(format!("weights: {e}")))?,
                )
            }
            "ground_truth" => body.ground_truth = matches!(text.trim(), "true" | "1" | "on"),
            other => return Err(ServiceError::invalid_request(format!("unknown form field {other:?}"))),
        }
    }
    Ok(body)
}

/// Runs synchronous coordinator work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn configure(State(c): State<Arc<Coordinator>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let config: SystemConfig = serde_json::from_slice(&body).map_err(|e| {
        ServiceError::InvalidConfig(ConfigError {
            field: String::new(),
            message: e.to_string(),
        })
    })?;
    let milestones = blocking(move || c.configure(config)).await?;
    Ok(Json(milestones))
}

async fn status(State(c): State<Arc<Coordinator>>) -> impl IntoResponse {
    Json(c.get_status())
}

async fn open_session(State(c): State<Arc<Coordinator>>) -> impl IntoResponse {
    (StatusCode::CREATED, Json(json!({ "session_id": c.open_session() })))
}

async fn query(State(c): State<Arc<Coordinator>>, req: Request) -> ApiResult<impl IntoResponse> {
    let (session, request, _) = read_query(req).await?.into_request()?;
    let session = session.ok_or_else(|| ServiceError::invalid_request("session_id is required"))?;
    let response = blocking(move || c.submit_query(&session, request)).await?;
    Ok(Json(response))
}

async fn compare(State(c): State<Arc<Coordinator>>, req: Request) -> ApiResult<impl IntoResponse> {
    let (session, request, ground_truth) = read_query(req).await?.into_request()?;
    let response = blocking(move || c.compare(session.as_deref(), request, ground_truth)).await?;
    Ok(Json(response))
}

async fn payload(
    State(c): State<Arc<Coordinator>>,
    Path((id, modality)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let payload = blocking(move || c.get_payload(&id, &modality)).await?;
    Ok(([(header::CONTENT_TYPE, payload.content_type)], payload.bytes))
}

async fn fallback() -> ApiError {
    ApiError(ServiceError::NotFound("no such endpoint".into()))
}

pub fn router(coordinator: Arc<Coordinator>) -> Router {
    Router::new()
        .route("/api/config", post(configure))
        .route("/api/status", get(status))
        .route("/api/session", post(open_session))
        .route("/api/query", post(query))
        .route("/api/compare", post(compare))
        .route("/api/objects/{id}/payload/{modality}", get(payload))
        .fallback(fallback)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(coordinator)
}

/// Listen address from the environment, or the default.
pub fn listen_addr() -> Result<SocketAddr, ServiceError> {
    let raw = std::env::var(LISTEN_ADDR_VAR).unwrap_or_else(|_| DEFAULT_LISTEN_ADDR.into());
    raw.parse()
        .map_err(|e| ServiceError::invalid_request(format!("{LISTEN_ADDR_VAR}={raw:?}: {e}")))
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, coordinator: Arc<Coordinator>) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(coordinator))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Binds `addr` and serves on a fresh multi-threaded runtime.
pub fn run_blocking(addr: SocketAddr, coordinator: Arc<Coordinator>) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(async move {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            serve(listener, coordinator).await
        })
}
