//! Real-time analytics for collaborative programming sessions: per-student
//! and per-group metrics, discussion topics, teacher notifications and
//! suggested notifications, served over a session stream.

pub mod fixture;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod notify;
pub mod session;
pub mod suggest;
pub mod topics;

pub use gateway::Gateway;
pub use metrics::{GroupState, MetricsState, SnapshotFrame, StudentState};
pub use model::{
    parse_event_log, parse_event_log_str, write_event_log, ChatPayload, ClockMode, CodeIssue, EventBody, EventRecord,
    GroupId, LogError, MessageCategory, RosterGroup, RosterPayload, SessionClock, StudentId, SubmissionPayload,
};
pub use notify::{Criteria, Notification, NotificationBook, NotificationId, NotificationSpec, Scope, TriggerEvent};
pub use session::{
    ClientMessage, Command, EngineConfig, PlaybackControl, SessionDescriptor, SessionEngine, SessionError, SessionService,
    SessionSnapshot, StreamMessage,
};
pub use suggest::{SuggestionDraft, View};
pub use topics::{TopicId, TopicRegistry};
