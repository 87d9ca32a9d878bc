//! HTTP and websocket front end.
//!
//! | route | |
//! |---|---|
//! | `GET /health` | liveness, no token needed |
//! | `GET /sessions`, `POST /sessions` | list, open (`{"device_id": ..}`) |
//! | `GET /sessions/{id}` | metadata and ingest counters |
//! | `POST /sessions/{id}/close` | seal the session |
//! | `GET /sessions/{id}/rows` | `t0`, `t1`, `kinds=a,b`, `offset`, `limit` |
//! | `POST /sessions/{id}/frames` | uplink bytes, replies per frame |
//! | `POST /sessions/{id}/commands` | JSON message, returns a receipt |
//! | `GET /sessions/{id}/export` | anonymized export of a closed session |
//! | `GET /sessions/{id}/stats`, `GET /stats` | aggregates |
//! | `GET /sessions/{id}/device` | websocket: device link |
//! | `GET /sessions/{id}/live` | websocket: dashboard subscription |
//!
//! Every route but `/health` requires the static token as
//! `Authorization: Bearer <token>` or `?token=<token>` when one is set.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use maskloop_core::protocol::{FrameDecoder, StreamEvent};
use maskloop_core::{Message, MessageKind};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

use crate::error::HubError;
use crate::row::Receipt;
use crate::store::{Hub, LiveEvent, RangeQuery};

pub const MAX_PAGE: usize = 1000;

#[derive(Clone)]
struct AppState {
    hub: Arc<Hub>,
    token: Option<Arc<str>>,
}

pub struct ApiError(HubError);

impl From<HubError> for ApiError {
    fn from(e: HubError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            HubError::UnknownSession(_) => StatusCode::NOT_FOUND,
            HubError::SessionClosed(_) | HubError::SessionLive(_) => StatusCode::CONFLICT,
            HubError::DeviceUnreachable(_) => StatusCode::SERVICE_UNAVAILABLE,
            HubError::NotACommand(_) | HubError::BadRequest(_) => StatusCode::BAD_REQUEST,
            HubError::Corrupt { .. } | HubError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Text replies on the dashboard socket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LiveReply {
    Receipt(Receipt),
    Error { error: String },
}

fn token_ok(req: &Request, token: &str) -> bool {
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let query = req
        .uri()
        .query()
        .into_iter()
        .flat_map(|q| q.split('&'))
        .find_map(|kv| kv.strip_prefix("token="));
    bearer == Some(token) || query == Some(token)
}

async fn auth(State(st): State<AppState>, req: Request, next: Next) -> Response {
    match &st.token {
        Some(t) if !token_ok(&req, t) => {
            (StatusCode::UNAUTHORIZED, Json(serde_json::json!({ "error": "missing or wrong token" }))).into_response()
        }
        _ => next.run(req).await,
    }
}

pub fn router(hub: Arc<Hub>, token: Option<String>) -> Router {
    let state = AppState {
        hub,
        token: token.map(Into::into),
    };
    let api = Router::new()
        .route("/sessions", get(list_sessions).post(open_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/close", post(close_session))
        .route("/sessions/{id}/rows", get(query_rows))
        .route("/sessions/{id}/frames", post(ingest_frames))
        .route("/sessions/{id}/commands", post(relay_command))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/stats", get(session_stats))
        .route("/stats", get(hub_stats))
        .route("/sessions/{id}/device", get(device_ws))
        .route("/sessions/{id}/live", get(live_ws))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .merge(api)
        .with_state(state)
}

/// Serve on `listener` until `shutdown` resolves, flushing buffered rows
/// every `flush_every` and once more on the way out.
pub async fn serve(
    listener: TcpListener,
    hub: Arc<Hub>,
    token: Option<String>,
    flush_every: Duration,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let flusher = {
        let hub = hub.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(flush_every);
            loop {
                tick.tick().await;
                if let Err(e) = hub.flush() {
                    tracing::error!("periodic flush failed: {e}");
                }
            }
        })
    };
    if let Ok(addr) = listener.local_addr() {
        tracing::info!("hub listening on {addr}");
    }
    let result = axum::serve(listener, router(hub.clone(), token))
        .with_graceful_shutdown(shutdown)
        .await;
    flusher.abort();
    hub.flush().map_err(std::io::Error::other)?;
    result
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

async fn list_sessions(State(st): State<AppState>) -> ApiResult<Vec<crate::row::SessionMeta>> {
    Ok(Json(st.hub.sessions()))
}

#[derive(Deserialize)]
struct OpenBody {
    device_id: String,
}

async fn open_session(State(st): State<AppState>, Json(body): Json<OpenBody>) -> Result<Response, ApiError> {
    let meta = st.hub.open_session(&body.device_id)?;
    Ok((StatusCode::CREATED, Json(meta)).into_response())
}

async fn session_info(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<crate::store::SessionInfo> {
    Ok(Json(st.hub.session_info(&id)?))
}

async fn close_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<crate::row::SessionMeta> {
    Ok(Json(st.hub.close_session(&id)?))
}

#[derive(Deserialize)]
struct RowsParams {
    t0: Option<u32>,
    t1: Option<u32>,
    kinds: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

fn parse_kinds(s: &str) -> Result<Vec<MessageKind>, HubError> {
    s.split(',')
        .filter(|k| !k.is_empty())
        .map(|k| MessageKind::parse(k).ok_or_else(|| HubError::BadRequest(format!("unknown kind {k:?}"))))
        .collect()
}

async fn query_rows(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(p): Query<RowsParams>,
) -> ApiResult<crate::store::RowPage> {
    let q = RangeQuery {
        t0: p.t0.unwrap_or(0),
        t1: p.t1.unwrap_or(u32::MAX),
        kinds: p.kinds.as_deref().map(parse_kinds).transpose()?,
        offset: p.offset.unwrap_or(0),
        limit: Some(p.limit.unwrap_or(MAX_PAGE).clamp(1, MAX_PAGE)),
    };
    Ok(Json(st.hub.query_range(&id, &q)?))
}

async fn ingest_frames(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Vec<crate::row::IngestReply>> {
    Ok(Json(st.hub.ingest(&id, &body)?))
}

async fn relay_command(State(st): State<AppState>, Path(id): Path<String>, Json(msg): Json<Message>) -> ApiResult<Receipt> {
    Ok(Json(st.hub.relay_command(&id, msg)?))
}

async fn export(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<crate::store::ExportRecord> {
    Ok(Json(st.hub.export_anonymized(&id)?))
}

async fn session_stats(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<crate::store::SessionStats> {
    Ok(Json(st.hub.session_stats(&id)?))
}

async fn hub_stats(State(st): State<AppState>) -> ApiResult<crate::store::HubStats> {
    Ok(Json(st.hub.stats()))
}

fn json_text<T: Serialize>(v: &T) -> WsMessage {
    WsMessage::Text(serde_json::to_string(v).expect("reply serializes").into())
}

fn require_open(hub: &Hub, id: &str) -> Result<(), HubError> {
    if hub.session_info(id)?.meta.is_closed() {
        return Err(HubError::SessionClosed(id.to_string()));
    }
    Ok(())
}

async fn device_ws(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    require_open(&st.hub, &id)?;
    Ok(ws.on_upgrade(move |socket| device_link(socket, st.hub, id)))
}

async fn device_link(socket: WebSocket, hub: Arc<Hub>, id: String) {
    if hub.attach_device(&id).is_err() {
        return;
    }
    let Ok(ready) = hub.downlink_notify(&id) else {
        return;
    };
    let (mut tx, mut rx) = socket.split();
    'conn: loop {
        for frame in hub.take_downlink(&id).unwrap_or_default() {
            if tx.send(WsMessage::Binary(frame.into())).await.is_err() {
                break 'conn;
            }
        }
        tokio::select! {
            msg = rx.next() => match msg {
                Some(Ok(WsMessage::Binary(bytes))) => match hub.ingest(&id, &bytes) {
                    Ok(replies) => {
                        for r in &replies {
                            if tx.send(json_text(r)).await.is_err() {
                                break 'conn;
                            }
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(json_text(&LiveReply::Error { error: e.to_string() })).await;
                        break;
                    }
                },
                Some(Ok(WsMessage::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            _ = ready.notified() => {}
        }
    }
    let _ = hub.detach_device(&id);
}

async fn live_ws(State(st): State<AppState>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    let sub = st.hub.subscribe(&id)?;
    Ok(ws.on_upgrade(move |socket| live_link(socket, st.hub, id, sub)))
}

async fn live_link(
    socket: WebSocket,
    hub: Arc<Hub>,
    id: String,
    mut sub: tokio::sync::broadcast::Receiver<LiveEvent>,
) {
    let (mut tx, mut rx) = socket.split();
    let mut decoder = FrameDecoder::new();
    loop {
        tokio::select! {
            ev = sub.recv() => match ev {
                Ok(LiveEvent::Frame { bytes, .. }) => {
                    if tx.send(WsMessage::Binary(Bytes::copy_from_slice(&bytes))).await.is_err() {
                        break;
                    }
                }
                Ok(LiveEvent::Closed) | Err(RecvError::Closed) => break,
                Err(RecvError::Lagged(n)) => {
                    // Skipping rows would break ordering for this subscriber.
                    let _ = tx.send(json_text(&LiveReply::Error { error: format!("lagged by {n} rows") })).await;
                    break;
                }
            },
            msg = rx.next() => match msg {
                Some(Ok(WsMessage::Binary(bytes))) => {
                    for ev in decoder.feed(&bytes) {
                        let reply = match ev {
                            StreamEvent::Frame(d) => match hub.relay_command(&id, d.message) {
                                Ok(r) => LiveReply::Receipt(r),
                                Err(e) => LiveReply::Error { error: e.to_string() },
                            },
                            StreamEvent::Dropped(e) => LiveReply::Error { error: e.to_string() },
                        };
                        if tx.send(json_text(&reply)).await.is_err() {
                            return;
                        }
                    }
                }
                Some(Ok(WsMessage::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = tx.send(WsMessage::Close(None)).await;
}
