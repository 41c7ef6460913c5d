//! Per-student and per-group metric state, snapshot frames, and the small
//! amount of arithmetic the views depend on (activity score, pass-rate
//! averaging, arrow thickness).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CodeIssue, EventBody, EventRecord, GroupId, MessageCategory, StudentId};
use crate::topics::TopicRef;

/// Upper bound of the activity scale.
pub const MAX_ACTIVITY: f64 = 12.0;

/// Contribution of one tagged message to the sender's activity score.
pub fn message_weight(category: MessageCategory) -> f64 {
    if category.is_class_related() {
        1.0
    } else {
        0.3
    }
}

/// Edge width of a structure-view arrow for a member with activity `a`.
pub fn arrow_thickness(activity_level: f64) -> f64 {
    (activity_level.max(0.0) * 0.25).min(2.0) + 1.0
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityRef {
    Student(StudentId),
    Group(GroupId),
}

impl EntityRef {
    pub fn id(&self) -> &str {
        match self {
            EntityRef::Student(id) | EntityRef::Group(id) => id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChangeField {
    Added,
    Removed,
    PassRate,
    ActivityLevel,
    CodeIssue,
    Submissions,
    Messages,
    GroupPassRate,
    TeamActivity,
    MembersParticipated,
    Topic,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Change {
    pub entity: EntityRef,
    pub field: ChangeField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageEntry {
    pub time_s: f64,
    pub category: MessageCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentState {
    pub student_id: StudentId,
    pub group_id: GroupId,
    pub pass_rate: f64,
    pub activity_level: f64,
    /// Unclamped sum of message weights; `activity_level` is this capped at 12.
    pub activity_score: f64,
    /// `None` until the first submission arrives.
    pub last_code_issue: Option<CodeIssue>,
    pub submissions: u32,
    pub message_log: Vec<MessageEntry>,
}

impl StudentState {
    fn new(student_id: StudentId, group_id: GroupId) -> Self {
        Self {
            student_id,
            group_id,
            pass_rate: 0.0,
            activity_level: 0.0,
            activity_score: 0.0,
            last_code_issue: None,
            submissions: 0,
            message_log: Vec::new(),
        }
    }

    pub fn passed_all(&self) -> bool {
        self.pass_rate >= 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub group_id: GroupId,
    pub member_ids: Vec<StudentId>,
    pub group_pass_rate: f64,
    pub team_activity: f64,
    pub members_participated: usize,
    pub participants: BTreeSet<StudentId>,
    pub message_count: usize,
    pub topic: TopicRef,
}

impl GroupState {
    fn new(group_id: GroupId, member_ids: Vec<StudentId>) -> Self {
        Self {
            group_id,
            member_ids,
            group_pass_rate: 0.0,
            team_activity: 0.0,
            members_participated: 0,
            participants: BTreeSet::new(),
            message_count: 0,
            topic: TopicRef::NoConversation,
        }
    }
}

/// Number of distinct members who sent at least one chat message.
pub fn members_participated(group: &GroupState) -> usize {
    group.participants.len()
}

/// Immutable view of every entity at one session time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFrame {
    pub time_s: f64,
    pub students: BTreeMap<StudentId, Arc<StudentState>>,
    pub groups: BTreeMap<GroupId, Arc<GroupState>>,
    pub change_set: Vec<Change>,
}

impl SnapshotFrame {
    pub fn empty(time_s: f64) -> Self {
        Self { time_s, students: BTreeMap::new(), groups: BTreeMap::new(), change_set: Vec::new() }
    }

    /// (pass metric, activity metric) of an entity, if present.
    pub fn position(&self, entity: &EntityRef) -> Option<(f64, f64)> {
        match entity {
            EntityRef::Student(id) => self.students.get(id).map(|s| (s.pass_rate, s.activity_level)),
            EntityRef::Group(id) => self.groups.get(id).map(|g| (g.group_pass_rate, g.team_activity)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("event at {0}s arrived after later events were applied")]
    OutOfOrderEvent(f64),
    #[error("unknown student {0:?}")]
    UnknownStudent(StudentId),
    #[error("unknown group {0:?}")]
    UnknownGroup(GroupId),
    #[error("unknown entity {0:?}")]
    UnknownEntity(EntityRef),
}

/// Context captured when a submission or message is applied; feeds the
/// history payloads sent to the language model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEntry {
    Submission {
        time_s: f64,
        student_id: StudentId,
        group_id: GroupId,
        passed: bool,
        pass_rate: f64,
        error_type: CodeIssue,
        error_message: String,
        group_pass_rate: f64,
    },
    /// Sender and group values are those in effect when the message was
    /// sent, before it is counted.
    Chat {
        time_s: f64,
        student_id: StudentId,
        group_id: GroupId,
        text: String,
        category: MessageCategory,
        sender_activity: f64,
        sender_pass_rate: f64,
        topic: TopicRef,
        group_activity: f64,
        group_pass_rate: f64,
    },
}

impl JournalEntry {
    pub fn student_id(&self) -> &str {
        match self {
            JournalEntry::Submission { student_id, .. } | JournalEntry::Chat { student_id, .. } => student_id,
        }
    }

    pub fn group_id(&self) -> &str {
        match self {
            JournalEntry::Submission { group_id, .. } | JournalEntry::Chat { group_id, .. } => group_id,
        }
    }
}

/// Mutable metric state of one session. A single writer feeds it events in
/// time order; every mutation returns the frame it produced.
#[derive(Debug, Clone, Default)]
pub struct MetricsState {
    time_s: f64,
    students: BTreeMap<StudentId, Arc<StudentState>>,
    groups: BTreeMap<GroupId, Arc<GroupState>>,
    journal: Vec<JournalEntry>,
}

impl MetricsState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn student(&self, id: &str) -> Option<&StudentState> {
        self.students.get(id).map(Arc::as_ref)
    }

    pub fn group(&self, id: &str) -> Option<&GroupState> {
        self.groups.get(id).map(Arc::as_ref)
    }

    /// Current state as a frame with the given change set.
    pub fn frame(&self, change_set: Vec<Change>) -> SnapshotFrame {
        SnapshotFrame {
            time_s: self.time_s,
            students: self.students.clone(),
            groups: self.groups.clone(),
            change_set,
        }
    }

    fn advance_time(&mut self, time_s: f64) -> Result<(), MetricsError> {
        if time_s < self.time_s || !time_s.is_finite() {
            return Err(MetricsError::OutOfOrderEvent(time_s));
        }
        self.time_s = time_s;
        Ok(())
    }

    /// A clock tick: time passes, nothing changes.
    pub fn tick(&mut self, time_s: f64) -> Result<SnapshotFrame, MetricsError> {
        self.advance_time(time_s)?;
        Ok(self.frame(Vec::new()))
    }

    pub fn apply_event(&mut self, event: &EventRecord) -> Result<SnapshotFrame, MetricsError> {
        // validate before mutating anything
        match &event.body {
            EventBody::Submission(sub) if !self.students.contains_key(&sub.student_id) => {
                return Err(MetricsError::UnknownStudent(sub.student_id.clone()))
            }
            EventBody::ChatMessage(chat) if !self.students.contains_key(&chat.student_id) => {
                return Err(MetricsError::UnknownStudent(chat.student_id.clone()))
            }
            _ => {}
        }
        self.advance_time(event.time_s)?;
        let mut changes = Vec::new();
        match &event.body {
            EventBody::SessionStart => {}
            EventBody::Roster(roster) => {
                for group in &roster.groups {
                    for member in &group.member_ids {
                        self.students.insert(
                            member.clone(),
                            Arc::new(StudentState::new(member.clone(), group.group_id.clone())),
                        );
                        changes.push(Change { entity: EntityRef::Student(member.clone()), field: ChangeField::Added });
                    }
                    self.groups.insert(
                        group.group_id.clone(),
                        Arc::new(GroupState::new(group.group_id.clone(), group.member_ids.clone())),
                    );
                    changes.push(Change { entity: EntityRef::Group(group.group_id.clone()), field: ChangeField::Added });
                }
            }
            EventBody::Submission(sub) => {
                let before = self.students[&sub.student_id].clone();
                let group_id = before.group_id.clone();
                let group_before = self.groups[&group_id].clone();
                {
                    let student = Arc::make_mut(self.students.get_mut(&sub.student_id).expect("checked above"));
                    student.pass_rate = sub.pass_rate();
                    student.last_code_issue = Some(sub.error_type);
                    student.submissions += 1;
                }
                self.recompute_group(&group_id);
                let after = &self.students[&sub.student_id];
                changes.extend(student_changes(&before, after));
                changes.extend(group_changes(&group_before, &self.groups[&group_id]));
                self.journal.push(JournalEntry::Submission {
                    time_s: event.time_s,
                    student_id: sub.student_id.clone(),
                    group_id: group_id.clone(),
                    passed: sub.tests_passed == sub.tests_total,
                    pass_rate: after.pass_rate,
                    error_type: sub.error_type,
                    error_message: sub.error_message.clone(),
                    group_pass_rate: self.groups[&group_id].group_pass_rate,
                });
            }
            EventBody::ChatMessage(chat) => {
                let category = chat.category.unwrap_or(MessageCategory::NotClassRelated);
                let before = self.students[&chat.student_id].clone();
                let group_id = before.group_id.clone();
                let group_before = self.groups[&group_id].clone();
                {
                    let student = Arc::make_mut(self.students.get_mut(&chat.student_id).expect("checked above"));
                    student.activity_score += message_weight(category);
                    student.activity_level = student.activity_score.min(MAX_ACTIVITY);
                    student.message_log.push(MessageEntry { time_s: event.time_s, category });
                }
                {
                    let group = Arc::make_mut(self.groups.get_mut(&group_id).ok_or_else(|| MetricsError::UnknownGroup(group_id.clone()))?);
                    group.participants.insert(chat.student_id.clone());
                    group.members_participated = group.participants.len();
                    group.message_count += 1;
                }
                self.recompute_group(&group_id);
                let after = &self.students[&chat.student_id];
                let group = &self.groups[&group_id];
                changes.extend(student_changes(&before, after));
                changes.extend(group_changes(&group_before, group));
                self.journal.push(JournalEntry::Chat {
                    time_s: event.time_s,
                    student_id: chat.student_id.clone(),
                    group_id: group_id.clone(),
                    text: chat.text.clone(),
                    category,
                    sender_activity: before.activity_level,
                    sender_pass_rate: before.pass_rate,
                    topic: group_before.topic,
                    group_activity: group_before.team_activity,
                    group_pass_rate: group_before.group_pass_rate,
                });
            }
        }
        Ok(self.frame(changes))
    }

    /// Publishes new topic assignments; groups not named keep their topic.
    pub fn set_topics(&mut self, time_s: f64, topics: &BTreeMap<GroupId, TopicRef>) -> Result<SnapshotFrame, MetricsError> {
        if let Some(unknown) = topics.keys().find(|g| !self.groups.contains_key(*g)) {
            return Err(MetricsError::UnknownGroup(unknown.clone()));
        }
        self.advance_time(time_s)?;
        let mut changes = Vec::new();
        for (group_id, topic) in topics {
            let slot = self.groups.get_mut(group_id).expect("checked above");
            if slot.topic != *topic {
                Arc::make_mut(slot).topic = *topic;
                changes.push(Change { entity: EntityRef::Group(group_id.clone()), field: ChangeField::Topic });
            }
        }
        Ok(self.frame(changes))
    }

    fn recompute_group(&mut self, group_id: &str) {
        let Some(slot) = self.groups.get(group_id) else { return };
        let (pass, activity) = group_means(&slot.member_ids, |id| self.students.get(id).map(Arc::as_ref));
        let slot = self.groups.get_mut(group_id).expect("present");
        if slot.group_pass_rate != pass || slot.team_activity != activity {
            let group = Arc::make_mut(slot);
            group.group_pass_rate = pass;
            group.team_activity = activity;
        }
    }
}

/// Arithmetic means of member pass rates and activity levels, summed in
/// roster order.
pub fn group_means<'a>(members: &[StudentId], lookup: impl Fn(&str) -> Option<&'a StudentState>) -> (f64, f64) {
    if members.is_empty() {
        return (0.0, 0.0);
    }
    let (mut pass, mut activity) = (0.0, 0.0);
    for member in members {
        if let Some(s) = lookup(member) {
            pass += s.pass_rate;
            activity += s.activity_level;
        }
    }
    let n = members.len() as f64;
    (pass / n, activity / n)
}

fn student_changes(before: &StudentState, after: &StudentState) -> Vec<Change> {
    let entity = || EntityRef::Student(after.student_id.clone());
    let mut out = Vec::new();
    if before.pass_rate != after.pass_rate {
        out.push(Change { entity: entity(), field: ChangeField::PassRate });
    }
    if before.activity_level != after.activity_level {
        out.push(Change { entity: entity(), field: ChangeField::ActivityLevel });
    }
    if before.last_code_issue != after.last_code_issue {
        out.push(Change { entity: entity(), field: ChangeField::CodeIssue });
    }
    if before.submissions != after.submissions {
        out.push(Change { entity: entity(), field: ChangeField::Submissions });
    }
    if before.message_log != after.message_log {
        out.push(Change { entity: entity(), field: ChangeField::Messages });
    }
    out
}

fn group_changes(before: &GroupState, after: &GroupState) -> Vec<Change> {
    let entity = || EntityRef::Group(after.group_id.clone());
    let mut out = Vec::new();
    if before.group_pass_rate != after.group_pass_rate {
        out.push(Change { entity: entity(), field: ChangeField::GroupPassRate });
    }
    if before.team_activity != after.team_activity {
        out.push(Change { entity: entity(), field: ChangeField::TeamActivity });
    }
    if before.members_participated != after.members_participated {
        out.push(Change { entity: entity(), field: ChangeField::MembersParticipated });
    }
    if before.message_count != after.message_count || before.participants != after.participants {
        out.push(Change { entity: entity(), field: ChangeField::Messages });
    }
    if before.topic != after.topic {
        out.push(Change { entity: entity(), field: ChangeField::Topic });
    }
    out
}

/// Full field-level difference between two frames, in entity order.
/// Used for seek deltas, where the previous frame is arbitrary.
pub fn diff_frames(prev: &SnapshotFrame, next: &SnapshotFrame) -> Vec<Change> {
    let mut out = Vec::new();
    for (id, after) in &next.students {
        match prev.students.get(id) {
            None => out.push(Change { entity: EntityRef::Student(id.clone()), field: ChangeField::Added }),
            Some(before) => out.extend(student_changes(before, after)),
        }
    }
    for id in prev.students.keys().filter(|id| !next.students.contains_key(*id)) {
        out.push(Change { entity: EntityRef::Student(id.clone()), field: ChangeField::Removed });
    }
    for (id, after) in &next.groups {
        match prev.groups.get(id) {
            None => out.push(Change { entity: EntityRef::Group(id.clone()), field: ChangeField::Added }),
            Some(before) => out.extend(group_changes(before, after)),
        }
    }
    for id in prev.groups.keys().filter(|id| !next.groups.contains_key(*id)) {
        out.push(Change { entity: EntityRef::Group(id.clone()), field: ChangeField::Removed });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time_s: f64,
    pub x: f64,
    pub y: f64,
}

/// Movement of one entity over the last `horizon_s` seconds: its position at
/// the start of the window, then one point per frame where it moved.
pub fn trace_history(entity: &EntityRef, frames: &[Arc<SnapshotFrame>], horizon_s: f64) -> Result<Vec<TracePoint>, MetricsError> {
    let last = frames.last().ok_or_else(|| MetricsError::UnknownEntity(entity.clone()))?;
    if last.position(entity).is_none() {
        return Err(MetricsError::UnknownEntity(entity.clone()));
    }
    let cutoff = last.time_s - horizon_s.max(0.0);
    // last frame at or before the cutoff anchors the window
    let anchor = frames.iter().rposition(|f| f.time_s <= cutoff && f.position(entity).is_some());
    let mut points: Vec<TracePoint> = Vec::new();
    let start = match anchor {
        Some(i) => {
            let (x, y) = frames[i].position(entity).expect("checked");
            points.push(TracePoint { time_s: frames[i].time_s, x, y });
            i + 1
        }
        None => 0,
    };
    for frame in &frames[start..] {
        if frame.time_s <= cutoff {
            continue;
        }
        let Some((x, y)) = frame.position(entity) else { continue };
        if points.last().is_some_and(|p| p.x == x && p.y == y) {
            continue;
        }
        points.push(TracePoint { time_s: frame.time_s, x, y });
    }
    Ok(points)
}

/// Groups ordered by ascending pass rate (ties by id), at most `cap` of them.
pub fn lowest_passrate_groups(frame: &SnapshotFrame, cap: usize) -> Vec<GroupId> {
    let mut groups: Vec<&GroupState> = frame.groups.values().map(Arc::as_ref).collect();
    groups.sort_by(|a, b| a.group_pass_rate.total_cmp(&b.group_pass_rate).then_with(|| a.group_id.cmp(&b.group_id)));
    groups.into_iter().take(cap.max(1)).map(|g| g.group_id.clone()).collect()
}

/// Number of structure glyphs shown at once.
pub const STRUCTURE_VIEW_CAP: usize = 8;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChatPayload, RosterGroup, RosterPayload, SubmissionPayload};
    use proptest::prelude::*;

    fn roster(groups: &[(&str, &[&str])]) -> EventRecord {
        EventRecord::new(
            0.0,
            EventBody::Roster(RosterPayload {
                groups: groups
                    .iter()
                    .map(|(g, m)| RosterGroup { group_id: g.to_string(), member_ids: m.iter().map(|s| s.to_string()).collect() })
                    .collect(),
            }),
        )
    }

    fn chat(t: f64, s: &str, g: &str, c: MessageCategory) -> EventRecord {
        EventRecord::new(
            t,
            EventBody::ChatMessage(ChatPayload { student_id: s.into(), group_id: g.into(), text: "msg".into(), category: Some(c) }),
        )
    }

    fn submit(t: f64, s: &str, passed: u32, total: u32) -> EventRecord {
        EventRecord::new(
            t,
            EventBody::Submission(SubmissionPayload {
                student_id: s.into(),
                tests_passed: passed,
                tests_total: total,
                error_type: if passed == total { CodeIssue::NoCompilingError } else { CodeIssue::LogicalError },
                error_message: String::new(),
            }),
        )
    }

    #[test]
    fn weights() {
        assert_eq!(message_weight(MessageCategory::HelpSeeking), 1.0);
        assert_eq!(message_weight(MessageCategory::NotClassRelated), 0.3);
        assert_eq!(message_weight(MessageCategory::HelpGiving), 1.0);
    }

    #[test]
    fn arrow_examples() {
        assert_eq!(arrow_thickness(0.0), 1.0);
        assert_eq!(arrow_thickness(4.0), 2.0);
        assert_eq!(arrow_thickness(12.0), 3.0);
    }

    #[test]
    fn off_topic_then_help_seeking_is_1_3() {
        let mut m = MetricsState::new();
        m.apply_event(&EventRecord::session_start()).unwrap();
        m.apply_event(&roster(&[("g", &["a", "b"])])).unwrap();
        m.apply_event(&chat(71.0, "a", "g", MessageCategory::NotClassRelated)).unwrap();
        let frame = m.apply_event(&chat(90.0, "a", "g", MessageCategory::HelpSeeking)).unwrap();
        assert!((frame.students["a"].activity_level - 1.3).abs() < 1e-9);
    }

    #[test]
    fn team_activity_moves_by_a_third() {
        let mut m = MetricsState::new();
        m.apply_event(&roster(&[("g", &["a", "b", "c"])])).unwrap();
        for t in 0..7 {
            m.apply_event(&chat(f64::from(t), if t < 3 { "a" } else { "c" }, "g", MessageCategory::HelpSeeking)).unwrap();
        }
        assert_eq!(m.group("g").unwrap().team_activity, 7.0 / 3.0);
        let frame = m.apply_event(&chat(27.0, "a", "g", MessageCategory::HelpSeeking)).unwrap();
        assert!((frame.groups["g"].team_activity - 2.6666666666666665).abs() < 1e-9);
        assert!(frame.change_set.contains(&Change { entity: EntityRef::Group("g".into()), field: ChangeField::TeamActivity }));
    }

    #[test]
    fn group_pass_rate_is_member_mean() {
        let mut m = MetricsState::new();
        m.apply_event(&roster(&[("g", &["a", "b", "c"])])).unwrap();
        m.apply_event(&submit(1.0, "a", 4, 4)).unwrap();
        m.apply_event(&submit(2.0, "b", 0, 4)).unwrap();
        let frame = m.apply_event(&submit(3.0, "c", 0, 4)).unwrap();
        assert_eq!(frame.groups["g"].group_pass_rate, 33.333333333333336);
    }

    #[test]
    fn latest_submission_wins() {
        let mut m = MetricsState::new();
        m.apply_event(&roster(&[("g", &["a"])])).unwrap();
        m.apply_event(&submit(1.0, "a", 4, 4)).unwrap();
        m.apply_event(&submit(2.0, "a", 1, 4)).unwrap();
        assert_eq!(m.student("a").unwrap().pass_rate, 25.0);
    }

    #[test]
    fn participation_counts_distinct_senders() {
        let mut m = MetricsState::new();
        m.apply_event(&roster(&[("g", &["a", "b", "c"]), ("h", &["d"])])).unwrap();
        for t in 0..5 {
            m.apply_event(&chat(f64::from(t), "a", "g", MessageCategory::HelpGiving)).unwrap();
        }
        assert_eq!(members_participated(m.group("g").unwrap()), 1);
        m.apply_event(&chat(6.0, "b", "g", MessageCategory::NotClassRelated)).unwrap();
        assert_eq!(members_participated(m.group("g").unwrap()), 2);
        assert_eq!(members_participated(m.group("h").unwrap()), 0);
    }

    #[test]
    fn rejects_out_of_order_and_unknown() {
        let mut m = MetricsState::new();
        m.apply_event(&roster(&[("g", &["a"])])).unwrap();
        m.tick(10.0).unwrap();
        assert_eq!(m.apply_event(&submit(5.0, "a", 1, 1)), Err(MetricsError::OutOfOrderEvent(5.0)));
        assert_eq!(m.apply_event(&submit(11.0, "zz", 1, 1)), Err(MetricsError::UnknownStudent("zz".into())));
    }

    #[test]
    fn trace_history_examples() {
        let mut m = MetricsState::new();
        m.apply_event(&roster(&[("g", &["a"])])).unwrap();
        let mut frames = vec![Arc::new(m.frame(vec![]))];
        for t in 1..5 {
            frames.push(Arc::new(m.tick(f64::from(t)).unwrap()));
        }
        let a = EntityRef::Student("a".into());
        assert_eq!(trace_history(&a, &frames, 100.0).unwrap().len(), 1);

        let mut m = MetricsState::new();
        m.apply_event(&roster(&[("g", &["a"])])).unwrap();
        let mut frames = vec![Arc::new(m.frame(vec![]))];
        for (t, p) in [(1.0, 1), (2.0, 1), (3.0, 2)] {
            frames.push(Arc::new(m.apply_event(&submit(t, "a", p, 4)).unwrap()));
        }
        let trace = trace_history(&a, &frames, 100.0).unwrap();
        assert_eq!(trace.iter().map(|p| p.x).collect::<Vec<_>>(), vec![0.0, 25.0, 50.0]);
        let now = trace_history(&a, &frames, 0.0).unwrap();
        assert_eq!(now, vec![TracePoint { time_s: 3.0, x: 50.0, y: 0.0 }]);
        assert!(matches!(trace_history(&EntityRef::Group("nope".into()), &frames, 1.0), Err(MetricsError::UnknownEntity(_))));
    }

    fn frame_with_rates(rates: &[(&str, f64)]) -> SnapshotFrame {
        let mut frame = SnapshotFrame::empty(0.0);
        for (id, rate) in rates {
            let mut g = GroupState::new(id.to_string(), vec![]);
            g.group_pass_rate = *rate;
            frame.groups.insert(id.to_string(), Arc::new(g));
        }
        frame
    }

    #[test]
    fn lowest_groups() {
        let frame = frame_with_rates(&[("x", 10.0), ("y", 50.0), ("z", 30.0)]);
        assert_eq!(lowest_passrate_groups(&frame, 8), vec!["x", "z", "y"]);
        let many: Vec<(String, f64)> = (0..12).map(|i| (format!("g{i:02}"), f64::from(i))).collect();
        let refs: Vec<(&str, f64)> = many.iter().map(|(a, b)| (a.as_str(), *b)).collect();
        assert_eq!(lowest_passrate_groups(&frame_with_rates(&refs), STRUCTURE_VIEW_CAP).len(), 8);
    }

    /// Tie-break oracle: every insertion order of the same groups yields the
    /// order given by a stable sort on (rate, id).
    #[test]
    fn ties_break_by_id_under_all_permutations() {
        let items = [("b", 0.0), ("a", 0.0), ("c", 20.0), ("d", 0.0)];
        let mut expected: Vec<(&str, f64)> = items.to_vec();
        expected.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(y.0)));
        let expected: Vec<String> = expected.iter().map(|(id, _)| id.to_string()).collect();
        let mut perm = items.to_vec();
        permute(&mut perm, 0, &mut |p| assert_eq!(lowest_passrate_groups(&frame_with_rates(p), 8), expected));
    }

    fn permute<T: Clone>(v: &mut Vec<T>, k: usize, f: &mut impl FnMut(&[T])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    /// Rebuilds every entity from the event prefix without incremental state.
    fn from_scratch(events: &[EventRecord]) -> (BTreeMap<String, (f64, f64)>, BTreeMap<String, (f64, f64, usize)>) {
        let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut students = BTreeMap::new();
        for e in events {
            if let EventBody::Roster(r) = &e.body {
                for g in &r.groups {
                    members.insert(g.group_id.clone(), g.member_ids.clone());
                }
            }
        }
        for ms in members.values() {
            for s in ms {
                let pass = events
                    .iter()
                    .rev()
                    .find_map(|e| match &e.body {
                        EventBody::Submission(sub) if &sub.student_id == s => Some(sub.pass_rate()),
                        _ => None,
                    })
                    .unwrap_or(0.0);
                let score: f64 = events
                    .iter()
                    .filter_map(|e| match &e.body {
                        EventBody::ChatMessage(c) if &c.student_id == s => Some(message_weight(c.category.unwrap())),
                        _ => None,
                    })
                    .fold(0.0, |a, w| a + w);
                students.insert(s.clone(), (pass, score.min(MAX_ACTIVITY)));
            }
        }
        let mut groups = BTreeMap::new();
        for (g, ms) in &members {
            let n = ms.len() as f64;
            let pass = ms.iter().map(|s| students[s].0).fold(0.0, |a, b| a + b) / n;
            let act = ms.iter().map(|s| students[s].1).fold(0.0, |a, b| a + b) / n;
            let senders: BTreeSet<&String> = events
                .iter()
                .filter_map(|e| match &e.body {
                    EventBody::ChatMessage(c) if &c.group_id == g => Some(&c.student_id),
                    _ => None,
                })
                .collect();
            groups.insert(g.clone(), (pass, act, senders.len()));
        }
        (students, groups)
    }

    fn arb_session() -> impl Strategy<Value = Vec<EventRecord>> {
        proptest::collection::vec((0usize..7, 0u8..3, 0u32..5, 0usize..6), 0..60).prop_map(|steps| {
            let ids = ["a", "b", "c", "d", "e", "f", "g"];
            let group_of = |i: usize| if i < 3 { "g1" } else if i < 6 { "g2" } else { "g3" };
            let mut events = vec![
                EventRecord::session_start(),
                roster(&[("g1", &["a", "b", "c"]), ("g2", &["d", "e", "f"]), ("g3", &["g"])]),
            ];
            for (i, (who, kind, passed, cat)) in steps.into_iter().enumerate() {
                let t = 1.0 + i as f64;
                events.push(if kind == 0 {
                    submit(t, ids[who], passed.min(4), 4)
                } else {
                    chat(t, ids[who], group_of(who), MessageCategory::ALL[cat])
                });
            }
            events
        })
    }

    proptest! {
        #[test]
        fn incremental_equals_recompute(events in arb_session()) {
            let mut m = MetricsState::new();
            let mut prev = m.frame(vec![]);
            let mut prev_activity: BTreeMap<String, f64> = BTreeMap::new();
            for (i, e) in events.iter().enumerate() {
                let frame = m.apply_event(e).unwrap();
                // change_set equals the full diff against the previous frame
                let mut expected = diff_frames(&prev, &frame);
                let mut got = frame.change_set.clone();
                expected.sort();
                got.sort();
                prop_assert_eq!(got, expected);
                let (students, groups) = from_scratch(&events[..=i]);
                for (id, (pass, act)) in &students {
                    let s = &frame.students[id];
                    prop_assert_eq!(s.pass_rate, *pass);
                    prop_assert_eq!(s.activity_level, *act);
                    prop_assert!(s.activity_level <= MAX_ACTIVITY);
                    prop_assert!(s.activity_level >= *prev_activity.get(id).unwrap_or(&0.0));
                    prev_activity.insert(id.clone(), s.activity_level);
                }
                for (id, (pass, act, n)) in &groups {
                    let g = &frame.groups[id];
                    prop_assert!((g.group_pass_rate - pass).abs() < 1e-9);
                    prop_assert!((g.team_activity - act).abs() < 1e-9);
                    prop_assert_eq!(g.members_participated, *n);
                }
                prev = frame;
            }
        }

        #[test]
        fn arrow_is_monotone(a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(arrow_thickness(lo) <= arrow_thickness(hi));
            if lo >= 8.0 { prop_assert_eq!(arrow_thickness(lo), 3.0); }
        }
    }
}
