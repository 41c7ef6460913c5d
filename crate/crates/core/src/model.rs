//! Event vocabulary, identifiers, and the session clock.
//!
//! A session is fully described by its event log: one JSON object per line,
//! ordered by `time_s` (seconds since the session started). Everything else in
//! the crate is derived from these records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type StudentId = String;
pub type GroupId = String;

/// Maximum number of students in one group.
pub const MAX_GROUP_SIZE: usize = 3;

/// Peer-interaction category assigned to every chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageCategory {
    HelpGiving,
    HelpSeeking,
    ExchangingInfoFeedback,
    JointReflection,
    MutualEncouragement,
    NotClassRelated,
}

impl MessageCategory {
    pub const ALL: [MessageCategory; 6] = [
        MessageCategory::HelpGiving,
        MessageCategory::HelpSeeking,
        MessageCategory::ExchangingInfoFeedback,
        MessageCategory::JointReflection,
        MessageCategory::MutualEncouragement,
        MessageCategory::NotClassRelated,
    ];

    /// Whether the message is about the exercise (categories 1-5).
    pub fn is_class_related(self) -> bool {
        self != MessageCategory::NotClassRelated
    }

    /// Label used in language-model payloads.
    pub fn label(self) -> &'static str {
        match self {
            MessageCategory::HelpGiving => "help-giving",
            MessageCategory::HelpSeeking => "help-seeking",
            MessageCategory::ExchangingInfoFeedback => "exchanging information and feedback",
            MessageCategory::JointReflection => "joint reflection on progress and process",
            MessageCategory::MutualEncouragement => "mutual encouragement and challenging",
            MessageCategory::NotClassRelated => "not related to the class",
        }
    }

    /// Inverse of [`MessageCategory::label`], tolerant of case and the
    /// "Not Class Related" spelling.
    pub fn from_label(label: &str) -> Option<Self> {
        let norm = normalize_name(label);
        if norm == "notclassrelated" {
            return Some(MessageCategory::NotClassRelated);
        }
        Self::ALL
            .into_iter()
            .find(|c| normalize_name(c.label()) == norm || normalize_name(&format!("{c:?}")) == norm)
    }
}

/// Compiler/test outcome of a submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CodeIssue {
    NoCompilingError,
    TypeError,
    NameError,
    IndentationError,
    IndexError,
    SyntaxError,
    LogicalError,
    OtherError,
}

impl CodeIssue {
    pub const ALL: [CodeIssue; 8] = [
        CodeIssue::NoCompilingError,
        CodeIssue::TypeError,
        CodeIssue::NameError,
        CodeIssue::IndentationError,
        CodeIssue::IndexError,
        CodeIssue::SyntaxError,
        CodeIssue::LogicalError,
        CodeIssue::OtherError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CodeIssue::NoCompilingError => "NoCompilingError",
            CodeIssue::TypeError => "TypeError",
            CodeIssue::NameError => "NameError",
            CodeIssue::IndentationError => "IndentationError",
            CodeIssue::IndexError => "IndexError",
            CodeIssue::SyntaxError => "SyntaxError",
            CodeIssue::LogicalError => "LogicalError",
            CodeIssue::OtherError => "OtherError",
        }
    }

    /// Spelling used in language-model payloads.
    pub fn label(self) -> &'static str {
        match self {
            CodeIssue::NoCompilingError => "No Compiling Error",
            CodeIssue::LogicalError => "Logical Error",
            CodeIssue::OtherError => "Other Error",
            other => other.name(),
        }
    }
}

impl fmt::Display for CodeIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize_name(raw: &str) -> String {
    raw.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Maps a raw error name reported by the test runner onto [`CodeIssue`].
///
/// Matching ignores case and whitespace, so `"Logical Error"` and
/// `"logicalerror"` both resolve to [`CodeIssue::LogicalError`]. An empty
/// name means the code ran: all tests passing is `NoCompilingError`, anything
/// less is a `LogicalError`.
pub fn classify_code_issue(tests_passed: u32, tests_total: u32, raw_error_name: &str) -> CodeIssue {
    let norm = normalize_name(raw_error_name);
    if norm.is_empty() {
        return if tests_passed >= tests_total {
            CodeIssue::NoCompilingError
        } else {
            CodeIssue::LogicalError
        };
    }
    CodeIssue::ALL
        .into_iter()
        .find(|issue| normalize_name(issue.name()) == norm)
        .unwrap_or(CodeIssue::OtherError)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterGroup {
    pub group_id: GroupId,
    pub member_ids: Vec<StudentId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterPayload {
    pub groups: Vec<RosterGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionPayload {
    pub student_id: StudentId,
    pub tests_passed: u32,
    pub tests_total: u32,
    pub error_type: CodeIssue,
    #[serde(default)]
    pub error_message: String,
}

impl SubmissionPayload {
    pub fn pass_rate(&self) -> f64 {
        100.0 * f64::from(self.tests_passed) / f64::from(self.tests_total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPayload {
    pub student_id: StudentId,
    pub group_id: GroupId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<MessageCategory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    SessionStart,
    Roster,
    Submission,
    ChatMessage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventBody {
    SessionStart,
    Roster(RosterPayload),
    Submission(SubmissionPayload),
    ChatMessage(ChatPayload),
}

/// One timestamped line of a session log.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time_s: f64,
    pub body: EventBody,
}

impl EventRecord {
    pub fn new(time_s: f64, body: EventBody) -> Self {
        Self { time_s, body }
    }

    pub fn session_start() -> Self {
        Self::new(0.0, EventBody::SessionStart)
    }

    pub fn kind(&self) -> EventKind {
        match self.body {
            EventBody::SessionStart => EventKind::SessionStart,
            EventBody::Roster(_) => EventKind::Roster,
            EventBody::Submission(_) => EventKind::Submission,
            EventBody::ChatMessage(_) => EventKind::ChatMessage,
        }
    }

    /// Canonical single-line JSON encoding.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event records always serialize")
    }
}

/// Serializes session times so that whole seconds print as integers
/// (`68`, not `68.0`). Keeps canonical logs byte-stable across a round trip.
pub mod session_time {
    use serde::{Deserialize, Deserializer, Serializer};

    const MAX_EXACT: f64 = 9_007_199_254_740_992.0;

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.fract() == 0.0 && t.abs() < MAX_EXACT {
            s.serialize_i64(*t as i64)
        } else {
            s.serialize_f64(*t)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

#[derive(Deserialize)]
struct WireEvent {
    kind: EventKind,
    #[serde(with = "session_time")]
    time_s: f64,
    #[serde(default)]
    payload: Option<serde_json::Value>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WirePayload<'a> {
    Roster(&'a RosterPayload),
    Submission(&'a SubmissionPayload),
    ChatMessage(&'a ChatPayload),
}

#[derive(Serialize)]
struct WireEventRef<'a> {
    kind: EventKind,
    #[serde(with = "session_time")]
    time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<WirePayload<'a>>,
}

impl Serialize for EventRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let payload = match &self.body {
            EventBody::SessionStart => None,
            EventBody::Roster(p) => Some(WirePayload::Roster(p)),
            EventBody::Submission(p) => Some(WirePayload::Submission(p)),
            EventBody::ChatMessage(p) => Some(WirePayload::ChatMessage(p)),
        };
        WireEventRef { kind: self.kind(), time_s: self.time_s, payload }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for EventRecord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = WireEvent::deserialize(d)?;
        fn take<T: serde::de::DeserializeOwned, E: Error>(p: Option<serde_json::Value>) -> Result<T, E> {
            let value = p.ok_or_else(|| E::missing_field("payload"))?;
            serde_json::from_value(value).map_err(E::custom)
        }
        let body = match wire.kind {
            EventKind::SessionStart => EventBody::SessionStart,
            EventKind::Roster => EventBody::Roster(take(wire.payload)?),
            EventKind::Submission => EventBody::Submission(take(wire.payload)?),
            EventKind::ChatMessage => EventBody::ChatMessage(take(wire.payload)?),
        };
        if !wire.time_s.is_finite() || wire.time_s < 0.0 {
            return Err(D::Error::custom("time_s must be a non-negative number"));
        }
        Ok(EventRecord { time_s: wire.time_s, body })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogError {
    #[error("line {0}: malformed record")]
    MalformedLine(usize),
    #[error("line {0}: time goes backwards")]
    NonMonotonicTime(usize),
    #[error("line {1}: unknown student {0:?}")]
    UnknownStudent(StudentId, usize),
    #[error("line {0}: expected exactly one SessionStart at time 0 as the first record")]
    BadSessionStart(usize),
    #[error("line {line}: invalid roster: {reason}")]
    InvalidRoster { line: usize, reason: String },
    #[error("line {line}: invalid submission: {reason}")]
    InvalidSubmission { line: usize, reason: String },
    #[error("line {line}: student {student:?} is not a member of group {group:?}")]
    WrongGroup { line: usize, student: StudentId, group: GroupId },
    #[error("log is empty")]
    Empty,
}

/// Incremental validator for event streams; shared by file parsing and live
/// ingestion so both enforce the same rules.
#[derive(Debug, Clone, Default)]
pub struct LogValidator {
    seen_start: bool,
    last_time: f64,
    membership: BTreeMap<StudentId, GroupId>,
    groups: BTreeSet<GroupId>,
}

impl LogValidator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn group_of(&self, student: &str) -> Option<&GroupId> {
        self.membership.get(student)
    }

    /// Checks `event` against everything seen so far and records it.
    /// `line` is only used for error reporting.
    pub fn check(&mut self, event: &EventRecord, line: usize) -> Result<(), LogError> {
        let is_start = matches!(event.body, EventBody::SessionStart);
        if !self.seen_start {
            if !is_start || event.time_s != 0.0 {
                return Err(LogError::BadSessionStart(line));
            }
        } else if is_start {
            return Err(LogError::BadSessionStart(line));
        }
        if event.time_s < self.last_time {
            return Err(LogError::NonMonotonicTime(line));
        }
        match &event.body {
            EventBody::SessionStart => {}
            EventBody::Roster(roster) => self.check_roster(roster, line)?,
            EventBody::Submission(sub) => {
                if !self.membership.contains_key(&sub.student_id) {
                    return Err(LogError::UnknownStudent(sub.student_id.clone(), line));
                }
                if sub.tests_total == 0 {
                    return Err(LogError::InvalidSubmission { line, reason: "tests_total must be positive".into() });
                }
                if sub.tests_passed > sub.tests_total {
                    return Err(LogError::InvalidSubmission { line, reason: "tests_passed exceeds tests_total".into() });
                }
                if sub.error_type == CodeIssue::NoCompilingError && !sub.error_message.is_empty() {
                    return Err(LogError::InvalidSubmission {
                        line,
                        reason: "NoCompilingError carries an error message".into(),
                    });
                }
            }
            EventBody::ChatMessage(chat) => match self.membership.get(&chat.student_id) {
                None => return Err(LogError::UnknownStudent(chat.student_id.clone(), line)),
                Some(group) if *group != chat.group_id => {
                    return Err(LogError::WrongGroup {
                        line,
                        student: chat.student_id.clone(),
                        group: chat.group_id.clone(),
                    })
                }
                Some(_) => {}
            },
        }
        self.seen_start = true;
        self.last_time = event.time_s;
        Ok(())
    }

    fn check_roster(&mut self, roster: &RosterPayload, line: usize) -> Result<(), LogError> {
        let invalid = |reason: String| LogError::InvalidRoster { line, reason };
        let mut pending: BTreeMap<&str, &str> = BTreeMap::new();
        let mut pending_groups = BTreeSet::new();
        for group in &roster.groups {
            if group.member_ids.is_empty() || group.member_ids.len() > MAX_GROUP_SIZE {
                return Err(invalid(format!("group {:?} has {} members", group.group_id, group.member_ids.len())));
            }
            if self.groups.contains(&group.group_id) || !pending_groups.insert(group.group_id.as_str()) {
                return Err(invalid(format!("group {:?} declared twice", group.group_id)));
            }
            for member in &group.member_ids {
                if self.membership.contains_key(member) || pending.insert(member, &group.group_id).is_some() {
                    return Err(invalid(format!("student {member:?} belongs to more than one group")));
                }
            }
        }
        for (student, group) in pending {
            self.membership.insert(student.to_owned(), group.to_owned());
        }
        self.groups.extend(pending_groups.into_iter().map(str::to_owned));
        Ok(())
    }
}

/// Reads a JSON Lines session log, validating every record. Blank lines are
/// skipped; line numbers are 1-based.
pub fn parse_event_log<R: BufRead>(reader: R) -> Result<Vec<EventRecord>, LogError> {
    let mut validator = LogValidator::new();
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|_| LogError::MalformedLine(line_no))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: EventRecord = serde_json::from_str(&line).map_err(|_| LogError::MalformedLine(line_no))?;
        validator.check(&event, line_no)?;
        events.push(event);
    }
    if events.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(events)
}

pub fn parse_event_log_str(text: &str) -> Result<Vec<EventRecord>, LogError> {
    parse_event_log(text.as_bytes())
}

/// Canonical JSON Lines encoding, newline-terminated.
pub fn write_event_log(events: &[EventRecord]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&event.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClockMode {
    Live,
    Replay,
    Paused,
}

impl FromStr for ClockMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(ClockMode::Live),
            "replay" => Ok(ClockMode::Replay),
            "paused" => Ok(ClockMode::Paused),
            other => Err(format!("unknown clock mode {other:?}")),
        }
    }
}

/// Session time as seen by a driver. Paused clocks never advance; replay
/// clocks advance only through [`SessionClock::advance_wall`] and seeks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionClock {
    pub now_s: f64,
    pub speed: f64,
    pub mode: ClockMode,
}

impl SessionClock {
    pub fn new(mode: ClockMode) -> Self {
        Self { now_s: 0.0, speed: 1.0, mode }
    }

    /// Advances by `wall_s` seconds of real time scaled by the speed.
    /// Returns the new session time.
    pub fn advance_wall(&mut self, wall_s: f64) -> f64 {
        if self.mode != ClockMode::Paused && wall_s > 0.0 {
            self.now_s += wall_s * self.speed;
        }
        self.now_s
    }

    pub fn set_speed(&mut self, speed: f64) -> bool {
        if speed.is_finite() && speed > 0.0 {
            self.speed = speed;
            true
        } else {
            false
        }
    }
}
