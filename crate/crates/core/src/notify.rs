//! Trackers and alerts.
//!
//! A tracker keeps per-value counts of one categorical attribute over time.
//! An alert watches a [`Criteria`] predicate: a spatial alert fires when the
//! number of matching entities rises above `n`; a temporal alert fires for
//! each entity that has matched for longer than `t_s` seconds without a
//! break. Both are driven only by frame timestamps, never by wall time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{GroupState, SnapshotFrame, StudentState, MAX_ACTIVITY};
use crate::model::{CodeIssue, MAX_GROUP_SIZE};
use crate::topics::TopicRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NotificationId(pub u32);

impl fmt::Display for NotificationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scope {
    Group,
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NumericAttribute {
    PassRate,
    ActivityLevel,
    TeamStructure,
}

impl NumericAttribute {
    /// Value domain shown in the attribute drop-downs.
    pub fn domain(self) -> (f64, f64) {
        match self {
            NumericAttribute::PassRate => (0.0, 100.0),
            NumericAttribute::ActivityLevel => (0.0, MAX_ACTIVITY),
            NumericAttribute::TeamStructure => (0.0, MAX_GROUP_SIZE as f64),
        }
    }
}

/// Inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoricalSets {
    #[serde(rename = "CodeIssue", default, skip_serializing_if = "Option::is_none")]
    pub code_issue: Option<BTreeSet<CodeIssue>>,
    #[serde(rename = "ConversationTopic", default, skip_serializing_if = "Option::is_none")]
    pub conversation_topic: Option<BTreeSet<TopicRef>>,
}

/// Conjunction of attribute constraints. Absent attributes are unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub scope: Scope,
    #[serde(default)]
    pub numeric_ranges: BTreeMap<NumericAttribute, Range>,
    #[serde(default)]
    pub categorical_sets: CategoricalSets,
}

impl Criteria {
    pub fn new(scope: Scope) -> Self {
        Self { scope, numeric_ranges: BTreeMap::new(), categorical_sets: CategoricalSets::default() }
    }

    pub fn with_range(mut self, attribute: NumericAttribute, lo: f64, hi: f64) -> Self {
        self.numeric_ranges.insert(attribute, Range::new(lo, hi));
        self
    }

    pub fn with_code_issues(mut self, issues: impl IntoIterator<Item = CodeIssue>) -> Self {
        self.categorical_sets.code_issue = Some(issues.into_iter().collect());
        self
    }

    pub fn with_topics(mut self, topics: impl IntoIterator<Item = TopicRef>) -> Self {
        self.categorical_sets.conversation_topic = Some(topics.into_iter().collect());
        self
    }

    pub fn validate(&self) -> Result<(), NotifyError> {
        let bad = |msg: String| Err(NotifyError::InvalidCriteria(msg));
        for (attr, range) in &self.numeric_ranges {
            if *attr == NumericAttribute::TeamStructure && self.scope != Scope::Group {
                return bad("TeamStructure requires Group scope".into());
            }
            if !range.lo.is_finite() || !range.hi.is_finite() || range.lo > range.hi {
                return bad(format!("{attr:?} range [{}, {}] is not a valid interval", range.lo, range.hi));
            }
            let (lo, hi) = attr.domain();
            if range.lo < lo || range.hi > hi {
                return bad(format!("{attr:?} range must lie within [{lo}, {hi}]"));
            }
        }
        if self.categorical_sets.code_issue.is_some() && self.scope != Scope::Individual {
            return bad("CodeIssue requires Individual scope".into());
        }
        if self.categorical_sets.conversation_topic.is_some() && self.scope != Scope::Group {
            return bad("ConversationTopic requires Group scope".into());
        }
        Ok(())
    }
}

/// Borrowed entity state for predicate evaluation.
#[derive(Debug, Clone, Copy)]
pub enum EntityView<'a> {
    Student(&'a StudentState),
    Group(&'a GroupState),
}

impl EntityView<'_> {
    pub fn id(&self) -> &str {
        match self {
            EntityView::Student(s) => &s.student_id,
            EntityView::Group(g) => &g.group_id,
        }
    }
}

pub fn matches(criteria: &Criteria, entity: EntityView<'_>) -> Result<bool, NotifyError> {
    let sets = &criteria.categorical_sets;
    match (criteria.scope, entity) {
        (Scope::Individual, EntityView::Student(s)) => {
            for (attr, range) in &criteria.numeric_ranges {
                let v = match attr {
                    NumericAttribute::PassRate => s.pass_rate,
                    NumericAttribute::ActivityLevel => s.activity_level,
                    NumericAttribute::TeamStructure => return Err(NotifyError::ScopeMismatch),
                };
                if !range.contains(v) {
                    return Ok(false);
                }
            }
            if sets.conversation_topic.is_some() {
                return Err(NotifyError::ScopeMismatch);
            }
            if let Some(allowed) = &sets.code_issue {
                if !s.last_code_issue.is_some_and(|i| allowed.contains(&i)) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        (Scope::Group, EntityView::Group(g)) => {
            for (attr, range) in &criteria.numeric_ranges {
                let v = match attr {
                    NumericAttribute::PassRate => g.group_pass_rate,
                    NumericAttribute::ActivityLevel => g.team_activity,
                    NumericAttribute::TeamStructure => g.members_participated as f64,
                };
                if !range.contains(v) {
                    return Ok(false);
                }
            }
            if sets.code_issue.is_some() {
                return Err(NotifyError::ScopeMismatch);
            }
            if let Some(allowed) = &sets.conversation_topic {
                if !allowed.contains(&g.topic) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        _ => Err(NotifyError::ScopeMismatch),
    }
}

/// Entities of the criteria's scope, in id order.
fn scope_entities<'a>(criteria: &Criteria, frame: &'a SnapshotFrame) -> Vec<EntityView<'a>> {
    match criteria.scope {
        Scope::Individual => frame.students.values().map(|s| EntityView::Student(s)).collect(),
        Scope::Group => frame.groups.values().map(|g| EntityView::Group(g)).collect(),
    }
}

/// Ids of the entities in `frame` that satisfy `criteria`.
pub fn preview(criteria: &Criteria, frame: &SnapshotFrame) -> Vec<String> {
    scope_entities(criteria, frame)
        .into_iter()
        .filter(|e| matches(criteria, *e).unwrap_or(false))
        .map(|e| e.id().to_owned())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlertMode {
    Spatial { n: u32 },
    Temporal { t_s: f64 },
}

impl AlertMode {
    fn validate(&self) -> Result<(), NotifyError> {
        match self {
            AlertMode::Temporal { t_s } if !t_s.is_finite() || *t_s < 0.0 => {
                Err(NotifyError::InvalidCriteria(format!("temporal threshold {t_s} must be a non-negative number")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Suggested,
    Active,
    Dismissed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerKind {
    SpatialThresholdCrossed,
    TemporalTimerExpired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub notification_id: NotificationId,
    pub time_s: f64,
    pub entered: Vec<String>,
    pub kind: TriggerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRecord {
    pub time_s: f64,
    pub entered: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: NotificationId,
    pub criteria: Criteria,
    pub mode: AlertMode,
    pub reason: String,
    pub status: Status,
    pub match_list: Vec<String>,
    /// Temporal mode: time at which each in-criteria entity's current
    /// episode began. Its timer is `now - start`.
    pub episode_starts: BTreeMap<String, f64>,
    pub trigger_log: Vec<TriggerRecord>,
    /// Spatial mode: match count at the previous evaluation.
    pub previous_count: usize,
}

impl Alert {
    pub fn new(id: NotificationId, criteria: Criteria, mode: AlertMode, reason: impl Into<String>) -> Self {
        Self {
            id,
            criteria,
            mode,
            reason: reason.into(),
            status: Status::Suggested,
            match_list: Vec::new(),
            episode_starts: BTreeMap::new(),
            trigger_log: Vec::new(),
            previous_count: 0,
        }
    }

    /// Contiguous in-criteria seconds per entity as of `now_s`.
    pub fn per_entity_timers(&self, now_s: f64) -> BTreeMap<String, f64> {
        self.episode_starts.iter().map(|(id, start)| (id.clone(), now_s - start)).collect()
    }

    /// Clears runtime state; configuration and trigger history are kept
    /// unless `clear_log` is set.
    pub fn reset_runtime(&mut self, clear_log: bool) {
        self.match_list.clear();
        self.episode_starts.clear();
        self.previous_count = 0;
        if clear_log {
            self.trigger_log.clear();
        }
    }

    fn record(&mut self, time_s: f64, entered: Vec<String>, kind: TriggerKind) -> TriggerEvent {
        self.trigger_log.push(TriggerRecord { time_s, entered: entered.clone() });
        TriggerEvent { notification_id: self.id, time_s, entered, kind }
    }
}

/// Edge-triggered count threshold: fires when the match count goes from
/// `<= n` to `> n`, listing every matching entity.
pub fn evaluate_spatial(alert: &mut Alert, frame: &SnapshotFrame) -> Option<TriggerEvent> {
    let AlertMode::Spatial { n } = alert.mode else { return None };
    let matching = preview(&alert.criteria, frame);
    let count = matching.len();
    let crossed = alert.previous_count <= n as usize && count > n as usize;
    alert.previous_count = count;
    alert.match_list = matching;
    crossed.then(|| {
        let entered = alert.match_list.clone();
        alert.record(frame.time_s, entered, TriggerKind::SpatialThresholdCrossed)
    })
}

/// Per-entity contiguous-duration threshold. An entity is reported once per
/// episode, at the first frame where its timer exceeds `t_s` (or on entry
/// when `t_s` is zero); leaving the criteria resets its timer.
pub fn evaluate_temporal(alert: &mut Alert, frame: &SnapshotFrame) -> Option<TriggerEvent> {
    let AlertMode::Temporal { t_s } = alert.mode else { return None };
    let now = frame.time_s;
    let matching: BTreeSet<String> = preview(&alert.criteria, frame).into_iter().collect();
    alert.episode_starts.retain(|id, _| matching.contains(id));
    alert.match_list.retain(|id| matching.contains(id));
    let mut entered = Vec::new();
    for id in &matching {
        let start = *alert.episode_starts.entry(id.clone()).or_insert(now);
        let timer = now - start;
        let due = timer > t_s || (t_s == 0.0 && timer >= 0.0);
        if due && !alert.match_list.contains(id) {
            entered.push(id.clone());
        }
    }
    alert.match_list.extend(entered.iter().cloned());
    (!entered.is_empty()).then(|| alert.record(now, entered, TriggerKind::TemporalTimerExpired))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrackerAttribute {
    CodeIssues,
    ConversationTopics,
    MembersParticipated,
}

impl TrackerAttribute {
    pub const ALL: [TrackerAttribute; 3] =
        [TrackerAttribute::CodeIssues, TrackerAttribute::ConversationTopics, TrackerAttribute::MembersParticipated];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Chart {
    Bar,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerSample {
    pub time_s: f64,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    pub id: NotificationId,
    pub attribute: TrackerAttribute,
    pub chart: Chart,
    pub reason: String,
    pub status: Status,
    /// Step series: a sample is stored only when the counts change.
    pub series: Vec<TrackerSample>,
}

impl Tracker {
    pub fn new(id: NotificationId, attribute: TrackerAttribute, chart: Chart, reason: impl Into<String>) -> Self {
        Self { id, attribute, chart, reason: reason.into(), status: Status::Suggested, series: Vec::new() }
    }

    /// Counts shown by the bar chart.
    pub fn latest(&self) -> Option<&TrackerSample> {
        self.series.last()
    }
}

/// Per-value counts of a tracker attribute in one frame. Topic keys use the
/// topic reference's wire form; participation always lists levels 0 to 3.
pub fn tracker_counts(attribute: TrackerAttribute, frame: &SnapshotFrame) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    match attribute {
        TrackerAttribute::CodeIssues => {
            for issue in frame.students.values().filter_map(|s| s.last_code_issue) {
                *counts.entry(issue.name().to_owned()).or_default() += 1;
            }
        }
        TrackerAttribute::ConversationTopics => {
            for g in frame.groups.values() {
                *counts.entry(topic_key(g.topic)).or_default() += 1;
            }
        }
        TrackerAttribute::MembersParticipated => {
            for level in 0..=MAX_GROUP_SIZE {
                counts.insert(level.to_string(), 0);
            }
            for g in frame.groups.values() {
                *counts.entry(g.members_participated.to_string()).or_default() += 1;
            }
        }
    }
    counts
}

pub fn topic_key(topic: TopicRef) -> String {
    match topic {
        TopicRef::NoConversation => crate::topics::NO_CONVERSATION.to_owned(),
        TopicRef::Topic(id) => id.to_string(),
    }
}

pub fn tracker_update(tracker: &mut Tracker, frame: &SnapshotFrame) {
    let counts = tracker_counts(tracker.attribute, frame);
    if tracker.series.last().is_none_or(|s| s.counts != counts) {
        tracker.series.push(TrackerSample { time_s: frame.time_s, counts });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Notification {
    Alert(Alert),
    Tracker(Tracker),
}

impl Notification {
    pub fn id(&self) -> NotificationId {
        match self {
            Notification::Alert(a) => a.id,
            Notification::Tracker(t) => t.id,
        }
    }

    pub fn status(&self) -> Status {
        match self {
            Notification::Alert(a) => a.status,
            Notification::Tracker(t) => t.status,
        }
    }

    fn status_mut(&mut self) -> &mut Status {
        match self {
            Notification::Alert(a) => &mut a.status,
            Notification::Tracker(t) => &mut t.status,
        }
    }

    pub fn reason(&self) -> &str {
        match self {
            Notification::Alert(a) => &a.reason,
            Notification::Tracker(t) => &t.reason,
        }
    }
}

/// Configuration of a notification before it gets an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum NotificationSpec {
    Alert { criteria: Criteria, mode: AlertMode, reason: String },
    Tracker { attribute: TrackerAttribute, chart: Chart, reason: String },
}

impl NotificationSpec {
    pub fn validate(&self) -> Result<(), NotifyError> {
        match self {
            NotificationSpec::Alert { criteria, mode, reason } => {
                if reason.trim().is_empty() {
                    return Err(NotifyError::InvalidCriteria("reason must not be empty".into()));
                }
                criteria.validate()?;
                mode.validate()
            }
            NotificationSpec::Tracker { reason, .. } if reason.trim().is_empty() => {
                Err(NotifyError::InvalidCriteria("reason must not be empty".into()))
            }
            NotificationSpec::Tracker { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "field", content = "value")]
pub enum NotificationEdit {
    Criteria(Criteria),
    Mode(AlertMode),
    Reason(String),
    Attribute(TrackerAttribute),
    /// Presentation only; allowed in any live status.
    Chart(Chart),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NotifyError {
    #[error("criteria scope does not match the entity kind")]
    ScopeMismatch,
    #[error("invalid criteria: {0}")]
    InvalidCriteria(String),
    #[error("notification {id} cannot {action} while {from:?}")]
    InvalidTransition { id: NotificationId, from: Status, action: &'static str },
    #[error("unknown notification {0}")]
    UnknownNotification(NotificationId),
    #[error("edit does not apply to this kind of notification")]
    EditMismatch,
}

/// All notifications of a session plus the session-long attribute series
/// that activated trackers start from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NotificationBook {
    next_id: u32,
    notifications: BTreeMap<NotificationId, Notification>,
    history: BTreeMap<TrackerAttribute, Vec<TrackerSample>>,
}

impl NotificationBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: NotificationId) -> Option<&Notification> {
        self.notifications.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Notification> {
        self.notifications.values()
    }

    pub fn create(&mut self, spec: NotificationSpec) -> Result<&Notification, NotifyError> {
        spec.validate()?;
        let id = NotificationId(self.next_id);
        self.next_id += 1;
        let notification = match spec {
            NotificationSpec::Alert { criteria, mode, reason } => Notification::Alert(Alert::new(id, criteria, mode, reason)),
            NotificationSpec::Tracker { attribute, chart, reason } => {
                Notification::Tracker(Tracker::new(id, attribute, chart, reason))
            }
        };
        Ok(self.notifications.entry(id).or_insert(notification))
    }

    fn slot(&mut self, id: NotificationId) -> Result<&mut Notification, NotifyError> {
        self.notifications.get_mut(&id).ok_or(NotifyError::UnknownNotification(id))
    }

    pub fn edit(&mut self, id: NotificationId, edit: NotificationEdit) -> Result<&Notification, NotifyError> {
        let slot = self.slot(id)?;
        let status = slot.status();
        let presentation_only = matches!(edit, NotificationEdit::Chart(_));
        if status == Status::Dismissed || (status == Status::Active && !presentation_only) {
            return Err(NotifyError::InvalidTransition { id, from: status, action: "be edited" });
        }
        let mut updated = slot.clone();
        match (&mut updated, edit) {
            (Notification::Alert(a), NotificationEdit::Criteria(c)) => a.criteria = c,
            (Notification::Alert(a), NotificationEdit::Mode(m)) => a.mode = m,
            (Notification::Alert(a), NotificationEdit::Reason(r)) => a.reason = r,
            (Notification::Tracker(t), NotificationEdit::Reason(r)) => t.reason = r,
            (Notification::Tracker(t), NotificationEdit::Attribute(attr)) => t.attribute = attr,
            (Notification::Tracker(t), NotificationEdit::Chart(c)) => t.chart = c,
            _ => return Err(NotifyError::EditMismatch),
        }
        spec_of(&updated).validate()?;
        *slot = updated;
        Ok(slot)
    }

    /// Suggested to Active. Alerts start with zeroed timers and are first
    /// evaluated on the next frame; trackers start from the session series.
    pub fn activate(&mut self, id: NotificationId) -> Result<&Notification, NotifyError> {
        let history = self.history.clone();
        let slot = self.slot(id)?;
        let status = slot.status();
        if status != Status::Suggested {
            return Err(NotifyError::InvalidTransition { id, from: status, action: "be activated" });
        }
        *slot.status_mut() = Status::Active;
        match slot {
            Notification::Alert(a) => a.reset_runtime(true),
            Notification::Tracker(t) => t.series = history.get(&t.attribute).cloned().unwrap_or_default(),
        }
        Ok(slot)
    }

    pub fn dismiss(&mut self, id: NotificationId) -> Result<&Notification, NotifyError> {
        let slot = self.slot(id)?;
        let status = slot.status();
        if status == Status::Dismissed {
            return Err(NotifyError::InvalidTransition { id, from: status, action: "be dismissed" });
        }
        *slot.status_mut() = Status::Dismissed;
        Ok(slot)
    }

    /// Evaluates every active notification against `frame`, in id order.
    pub fn evaluate(&mut self, frame: &SnapshotFrame) -> Vec<TriggerEvent> {
        for attribute in TrackerAttribute::ALL {
            let counts = tracker_counts(attribute, frame);
            let series = self.history.entry(attribute).or_default();
            if series.last().is_none_or(|s| s.counts != counts) {
                series.push(TrackerSample { time_s: frame.time_s, counts });
            }
        }
        let mut triggers = Vec::new();
        for notification in self.notifications.values_mut() {
            match notification {
                Notification::Alert(a) if a.status == Status::Active => {
                    let fired = match a.mode {
                        AlertMode::Spatial { .. } => evaluate_spatial(a, frame),
                        AlertMode::Temporal { .. } => evaluate_temporal(a, frame),
                    };
                    triggers.extend(fired);
                }
                Notification::Tracker(t) if t.status == Status::Active => tracker_update(t, frame),
                _ => {}
            }
        }
        triggers
    }

    /// Forgets all frame-derived state (seek). Configuration and status are
    /// kept; alerts and trackers rebuild as frames are re-applied.
    pub fn reset_runtime(&mut self) {
        self.history.clear();
        for notification in self.notifications.values_mut() {
            match notification {
                Notification::Alert(a) => a.reset_runtime(true),
                Notification::Tracker(t) => t.series.clear(),
            }
        }
    }
}

fn spec_of(n: &Notification) -> NotificationSpec {
    match n {
        Notification::Alert(a) => NotificationSpec::Alert { criteria: a.criteria.clone(), mode: a.mode, reason: a.reason.clone() },
        Notification::Tracker(t) => NotificationSpec::Tracker { attribute: t.attribute, chart: t.chart, reason: t.reason.clone() },
    }
}
