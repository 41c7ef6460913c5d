//! HTTP and WebSocket front end for a [`SessionService`].
//!
//! Routes:
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | GET | `/health` | | `{"status":"ok"}` |
//! | GET | `/sessions` | | session descriptors |
//! | POST | `/sessions` | `CreateSession` | descriptor (201) |
//! | GET | `/sessions/{id}` | | descriptor |
//! | POST | `/sessions/{id}/events` | event or array of events | ack or array of acks |
//! | GET | `/sessions/{id}/snapshot` | | `SessionSnapshot` |
//! | POST | `/sessions/{id}/commands` | `Command` | `CommandResult` |
//! | POST | `/sessions/{id}/playback` | `PlaybackControl` | `SessionClock` |
//! | GET | `/sessions/{id}/trace?entity=student:ID&horizon_s=300` | | trace points |
//! | GET | `/sessions/{id}/stream` | WebSocket | see [`Outbound`] |
//!
//! The stream opens with a `Snapshot` message, then carries every
//! `StreamMessage` emitted after it. Clients may send `ClientMessage`s; each
//! gets a `CommandResult`, `PlaybackAck` or `Error` reply.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use groupscope_core::metrics::{EntityRef, TracePoint};
use groupscope_core::model::{EventRecord, SessionClock};
use groupscope_core::notify::NotifyError;
use groupscope_core::session::{
    ClientMessage, Command, CommandResult, CreateSession, IngestAck, PlaybackControl, SessionDescriptor, SessionError,
    SessionService, SessionSnapshot, StreamMessage,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc::UnboundedReceiver;

/// How often session clocks are moved to wall time.
pub const PUMP_PERIOD: Duration = Duration::from_millis(200);

#[derive(Clone)]
struct AppState {
    service: Arc<SessionService>,
}

impl AppState {
    /// Service calls may block on locks or on a remote model, so they run
    /// off the async workers.
    async fn call<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&SessionService) -> Result<T, SessionError> + Send + 'static,
    {
        let service = self.service.clone();
        match tokio::task::spawn_blocking(move || f(&service)).await {
            Ok(result) => result.map_err(ApiError::from),
            Err(e) => Err(ApiError::internal(e.to_string())),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn internal(message: String) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message }
    }

    fn bad_request(message: String) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code: "bad_request", message }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::Notify(NotifyError::UnknownNotification(_)) => (StatusCode::NOT_FOUND, "unknown_notification"),
            SessionError::SessionExists(_) => (StatusCode::CONFLICT, "session_exists"),
            SessionError::SessionNotLive | SessionError::NotReplay => (StatusCode::CONFLICT, "wrong_mode"),
            SessionError::OutOfOrderEvent { .. } => (StatusCode::CONFLICT, "out_of_order"),
            SessionError::Notify(NotifyError::InvalidTransition { .. }) => (StatusCode::CONFLICT, "invalid_transition"),
            SessionError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            SessionError::Suggest(_) => (StatusCode::UNPROCESSABLE_ENTITY, "suggestion"),
            SessionError::InvalidSessionId(_)
            | SessionError::Validation(_)
            | SessionError::Metrics(_)
            | SessionError::Notify(_)
            | SessionError::SeekOutOfRange { .. }
            | SessionError::InvalidSpeed(_) => (StatusCode::BAD_REQUEST, "invalid"),
        };
        Self { status, code, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

/// Replies sent on a stream besides [`StreamMessage`]s, in the same
/// `{"kind", "payload"}` envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Outbound {
    Snapshot(SessionSnapshot),
    CommandResult(CommandResult),
    PlaybackAck(SessionClock),
    Error { message: String },
}

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(describe))
        .route("/sessions/{id}/events", post(ingest))
        .route("/sessions/{id}/snapshot", get(snapshot))
        .route("/sessions/{id}/commands", post(command))
        .route("/sessions/{id}/playback", post(playback))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(AppState { service })
}

/// Advances every session clock every [`PUMP_PERIOD`] until the runtime
/// shuts down.
pub fn spawn_pump(service: Arc<SessionService>) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(PUMP_PERIOD);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            interval.tick().await;
            let service = service.clone();
            if tokio::task::spawn_blocking(move || service.pump()).await.is_err() {
                tracing::error!("session pump panicked");
            }
        }
    })
}

async fn list_sessions(State(state): State<AppState>) -> Result<Json<Vec<SessionDescriptor>>, ApiError> {
    state.call(|s| Ok(s.list())).await.map(Json)
}

async fn create_session(
    State(state): State<AppState>,
    body: Option<Json<CreateSession>>,
) -> Result<(StatusCode, Json<SessionDescriptor>), ApiError> {
    let request = body.map(|Json(b)| b).unwrap_or_default();
    let descriptor = state.call(move |s| s.create(request)).await?;
    tracing::info!(session = %descriptor.session_id, "session created");
    Ok((StatusCode::CREATED, Json(descriptor)))
}

async fn describe(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionDescriptor>, ApiError> {
    state.call(move |s| s.descriptor(&id)).await.map(Json)
}

async fn ingest(State(state): State<AppState>, Path(id): Path<String>, Json(body): Json<Value>) -> Result<Json<Value>, ApiError> {
    let batch = body.is_array();
    let events: Vec<EventRecord> = if batch {
        serde_json::from_value(body).map_err(|e| ApiError::bad_request(e.to_string()))?
    } else {
        vec![serde_json::from_value(body).map_err(|e| ApiError::bad_request(e.to_string()))?]
    };
    let acks = state
        .call(move |s| {
            let mut acks: Vec<IngestAck> = Vec::with_capacity(events.len());
            for (i, event) in events.into_iter().enumerate() {
                match s.ingest(&id, event) {
                    Ok(ack) => acks.push(ack),
                    Err(e) if batch => {
                        tracing::warn!(session = %id, index = i, error = %e, "batch stopped");
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(acks)
        })
        .await?;
    let value = if batch { serde_json::to_value(acks) } else { serde_json::to_value(&acks[0]) };
    Ok(Json(value.expect("acks serialize")))
}

async fn snapshot(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    state.call(move |s| s.snapshot(&id)).await.map(Json)
}

async fn command(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(command): Json<Command>,
) -> Result<Json<CommandResult>, ApiError> {
    state.call(move |s| s.command(&id, command)).await.map(Json)
}

async fn playback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(control): Json<PlaybackControl>,
) -> Result<Json<SessionClock>, ApiError> {
    state.call(move |s| s.control(&id, control)).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct TraceQuery {
    entity: String,
    #[serde(default = "default_horizon")]
    horizon_s: f64,
}

fn default_horizon() -> f64 {
    300.0
}

fn parse_entity(text: &str) -> Option<EntityRef> {
    let (kind, id) = text.split_once(':')?;
    match kind {
        "student" => Some(EntityRef::Student(id.to_owned())),
        "group" => Some(EntityRef::Group(id.to_owned())),
        _ => None,
    }
}

async fn trace(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<TraceQuery>,
) -> Result<Json<Vec<TracePoint>>, ApiError> {
    let entity = parse_entity(&query.entity)
        .ok_or_else(|| ApiError::bad_request(format!("entity must be student:ID or group:ID, got {:?}", query.entity)))?;
    state.call(move |s| s.trace(&id, &entity, query.horizon_s)).await.map(Json)
}

async fn stream(ws: WebSocketUpgrade, State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = id.clone();
    let (snapshot, rx) = state.call(move |s| s.subscribe(&session)).await?;
    Ok(ws.on_upgrade(move |socket| run_stream(socket, state, id, snapshot, rx)))
}

fn text(value: &impl Serialize) -> Message {
    Message::Text(serde_json::to_string(value).expect("outbound messages serialize").into())
}

async fn run_stream(
    mut socket: WebSocket,
    state: AppState,
    id: String,
    snapshot: SessionSnapshot,
    mut rx: UnboundedReceiver<StreamMessage>,
) {
    if socket.send(text(&Outbound::Snapshot(snapshot))).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            message = rx.recv() => {
                let Some(message) = message else { break };
                if socket.send(Message::Text(message.encode().into())).await.is_err() {
                    break;
                }
            }
            inbound = socket.recv() => {
                let reply = match inbound {
                    Some(Ok(Message::Text(body))) => handle_client(&state, &id, body.as_str()).await,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                    Some(Ok(_)) => continue,
                };
                if socket.send(text(&reply)).await.is_err() {
                    break;
                }
            }
        }
    }
    tracing::debug!(session = %id, "stream closed");
}

async fn handle_client(state: &AppState, id: &str, body: &str) -> Outbound {
    let message: ClientMessage = match serde_json::from_str(body) {
        Ok(m) => m,
        Err(e) => return Outbound::Error { message: e.to_string() },
    };
    let id = id.to_owned();
    let result = match message {
        ClientMessage::Command { command } => state.call(move |s| s.command(&id, command)).await.map(Outbound::CommandResult),
        ClientMessage::Playback { control } => state.call(move |s| s.control(&id, control)).await.map(Outbound::PlaybackAck),
    };
    result.unwrap_or_else(|e| Outbound::Error { message: e.message })
}
