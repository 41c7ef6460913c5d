//! Session lifecycle: the deterministic per-session engine, its wire
//! protocol, replay with playback controls, and the durable multi-session
//! service.

mod engine;
mod replay;
mod service;
mod stream;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::DEFAULT_PROBLEM;
use crate::metrics::MetricsError;
use crate::model::LogError;
use crate::notify::NotifyError;
use crate::suggest::SuggestError;

pub use engine::{
    Command, CommandRecord, CommandResult, EngineConfig, Job, JobMode, JobResult, Logged, SessionEngine, SessionSnapshot,
};
pub use replay::{ManualTime, PlaybackControl, Replayer, SystemTime, TimeSource};
pub use service::{CreateSession, IngestAck, ServiceConfig, SessionService};
pub use stream::{ClientMessage, ClientMirror, DraftNotice, FrameDelta, RegistryUpdate, StreamMessage};

/// The programming problem students work on during a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exercise {
    pub title: String,
    pub prompt: String,
    pub tests_total: u32,
}

impl Default for Exercise {
    fn default() -> Self {
        Self { title: "Count Under 100".into(), prompt: DEFAULT_PROBLEM.into(), tests_total: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum SessionMode {
    Live,
    Replay { log_path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub exercise: Exercise,
    /// Unix seconds.
    pub created_at: u64,
    pub mode: SessionMode,
}

impl SessionDescriptor {
    pub fn live(session_id: impl Into<String>) -> Self {
        Self { session_id: session_id.into(), exercise: Exercise::default(), created_at: 0, mode: SessionMode::Live }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} already exists")]
    SessionExists(String),
    #[error("invalid session id {0:?}")]
    InvalidSessionId(String),
    #[error("session is not live")]
    SessionNotLive,
    #[error("session is not a replay")]
    NotReplay,
    #[error("event at {time_s}s is earlier than the last applied event at {last_s}s")]
    OutOfOrderEvent { time_s: f64, last_s: f64 },
    #[error(transparent)]
    Validation(#[from] LogError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Notify(#[from] NotifyError),
    #[error(transparent)]
    Suggest(#[from] SuggestError),
    #[error("seek target {target_s}s outside [0, {duration_s}]s")]
    SeekOutOfRange { target_s: f64, duration_s: f64 },
    #[error("speed multiplier must be positive, got {0}")]
    InvalidSpeed(f64),
    #[error("storage: {0}")]
    Storage(String),
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Storage(e.to_string())
    }
}
