//! Suggested notifications.
//!
//! Interaction-based drafts turn a gesture on one of the views into a
//! pre-filled alert. Historic drafts come from a four-step chain that runs
//! every 15 s of session time:
//!
//! 1. and 2. one model call identifies each entity's main issue and ranks
//!    entities by severity ([`rank_issues`]);
//! 3. a second call summarizes the top five issues and names the aspects
//!    involved ([`summarize_top5`]);
//! 4. local arithmetic turns those aspects into criteria over the top
//!    entities' current values ([`derive_criteria`]).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Task};
use crate::metrics::{EntityRef, JournalEntry, SnapshotFrame};
use crate::model::{CodeIssue, GroupId, StudentId};
use crate::notify::{
    preview, AlertMode, Chart, Criteria, EntityView, NotificationSpec, NumericAttribute, Scope, TrackerAttribute,
};
use crate::topics::{TopicRef, TopicRegistry};

pub const SUGGESTION_PERIOD_S: f64 = 15.0;
pub const MAX_MESSAGES_PER_ENTITY: usize = 50;
pub const MAX_SUBMISSIONS_PER_ENTITY: usize = 25;
pub const TOP_ISSUES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Aspect {
    PassRate,
    RelatedMessages,
    Topic,
    Participation,
    CodeIssue,
}

impl Aspect {
    pub const ALL: [Aspect; 5] =
        [Aspect::PassRate, Aspect::RelatedMessages, Aspect::Topic, Aspect::Participation, Aspect::CodeIssue];

    pub fn label(self) -> &'static str {
        match self {
            Aspect::PassRate => "pass rate",
            Aspect::RelatedMessages => "amount of related messages in the conversation",
            Aspect::Topic => "topic of conversation",
            Aspect::Participation => "member's participation in discussion",
            Aspect::CodeIssue => "code issue",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        let label = label.trim();
        Self::ALL.into_iter().find(|a| a.label() == label)
    }

    /// Whether the aspect belongs to the vocabulary of `scope`.
    pub fn in_scope(self, scope: Scope) -> bool {
        match self {
            Aspect::Participation => scope == Scope::Group,
            Aspect::CodeIssue => scope == Scope::Individual,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedIssue {
    pub rank: u32,
    pub entity_id: String,
    pub aspect: Aspect,
    pub issue: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueSummary {
    pub issue_summary: String,
    pub aspect_list: Vec<Aspect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    GroupView,
    StructureView,
    IndividualView,
}

impl View {
    pub fn scope(self) -> Scope {
        match self {
            View::GroupView | View::StructureView => Scope::Group,
            View::IndividualView => Scope::Individual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DetailValue {
    Topic(TopicRef),
    CodeIssue(CodeIssue),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Gesture {
    PointClick { entity: EntityRef },
    /// Pass-rate range on x, activity range on y.
    AreaSelect { x_range: (f64, f64), y_range: (f64, f64) },
    DetailRowExpand { value: DetailValue },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionContext {
    pub view: View,
    pub gesture: Gesture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    InteractionBased,
    HistoricBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionDraft {
    pub notification: NotificationSpec,
    pub reason: String,
    pub provenance: Provenance,
    pub created_at_s: f64,
    /// Historic drafts also suggest a tracker for the most frequent
    /// categorical aspect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion_tracker: Option<NotificationSpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuggestError {
    #[error("the selection has zero area")]
    EmptySelection,
    #[error("selection lies outside the view's axes")]
    OutOfDomain,
    #[error("{0}")]
    UnsupportedGesture(String),
    #[error("unknown entity {0:?}")]
    UnknownEntity(EntityRef),
    #[error("no entities to rank")]
    NoEntities,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn view_name(view: View) -> &'static str {
    match view {
        View::GroupView => "Group View",
        View::StructureView => "Structure View",
        View::IndividualView => "Individual View",
    }
}

fn fmt_num(v: f64) -> String {
    let rounded = (v * 100.0).round() / 100.0;
    if rounded.fract() == 0.0 {
        format!("{}", rounded as i64)
    } else {
        format!("{rounded}")
    }
}

/// Spatial alert that fires once more entities match than match now.
fn alert_from(criteria: Criteria, reason: String, frame: &SnapshotFrame) -> NotificationSpec {
    let n = preview(&criteria, frame).len() as u32;
    NotificationSpec::Alert { criteria, mode: AlertMode::Spatial { n }, reason }
}

pub fn suggest_from_interaction(
    ctx: &InteractionContext,
    frame: &SnapshotFrame,
    registry: &TopicRegistry,
) -> Result<SuggestionDraft, SuggestError> {
    let scope = ctx.view.scope();
    let (criteria, reason) = match (&ctx.gesture, ctx.view) {
        (Gesture::AreaSelect { x_range, y_range }, View::GroupView | View::IndividualView) => {
            let (x0, x1) = (x_range.0.min(x_range.1), x_range.0.max(x_range.1));
            let (y0, y1) = (y_range.0.min(y_range.1), y_range.0.max(y_range.1));
            if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
                return Err(SuggestError::OutOfDomain);
            }
            if x0 == x1 || y0 == y1 {
                return Err(SuggestError::EmptySelection);
            }
            let (px, ax) = (NumericAttribute::PassRate.domain(), NumericAttribute::ActivityLevel.domain());
            if x0 < px.0 || x1 > px.1 || y0 < ax.0 || y1 > ax.1 {
                return Err(SuggestError::OutOfDomain);
            }
            let criteria = Criteria::new(scope)
                .with_range(NumericAttribute::PassRate, x0, x1)
                .with_range(NumericAttribute::ActivityLevel, y0, y1);
            let reason = format!(
                "User selects pass rate {}-{}% and activity level {}-{} in the {}.",
                fmt_num(x0),
                fmt_num(x1),
                fmt_num(y0),
                fmt_num(y1),
                view_name(ctx.view)
            );
            (criteria, reason)
        }
        (Gesture::PointClick { entity: EntityRef::Group(id) }, View::StructureView) => {
            let group = frame.groups.get(id).ok_or_else(|| SuggestError::UnknownEntity(EntityRef::Group(id.clone())))?;
            let active = group.members_participated as f64;
            let criteria = Criteria::new(Scope::Group)
                .with_topics([group.topic])
                .with_range(NumericAttribute::TeamStructure, active, active);
            let reason = format!(
                "User clicks group {id} discussing \"{}\" with {} active members.",
                registry.summary(group.topic),
                group.members_participated
            );
            (criteria, reason)
        }
        (Gesture::DetailRowExpand { value: DetailValue::Topic(topic) }, View::GroupView | View::StructureView) => {
            let criteria = Criteria::new(Scope::Group).with_topics([*topic]);
            (criteria, format!("User expands the topic \"{}\" in the details list.", registry.summary(*topic)))
        }
        (Gesture::DetailRowExpand { value: DetailValue::CodeIssue(issue) }, View::IndividualView) => {
            let criteria = Criteria::new(Scope::Individual).with_code_issues([*issue]);
            (criteria, format!("User expands the code issue \"{}\" in the details list.", issue.label()))
        }
        (gesture, view) => {
            return Err(SuggestError::UnsupportedGesture(format!("{gesture:?} has no suggestion in the {}", view_name(view))))
        }
    };
    Ok(SuggestionDraft {
        notification: alert_from(criteria, reason.clone(), frame),
        reason,
        provenance: Provenance::InteractionBased,
        created_at_s: frame.time_s,
        companion_tracker: None,
    })
}

/// JSON number, integral values without a fraction.
fn num(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        json!(v as i64)
    } else {
        json!(v)
    }
}

fn tail<T>(items: Vec<T>, keep: usize) -> Vec<T> {
    let skip = items.len().saturating_sub(keep);
    items.into_iter().skip(skip).collect()
}

/// Chain input document for every entity of `scope`, with at most the last
/// 50 messages and 25 submissions per entity.
pub fn build_history_payload(frame: &SnapshotFrame, journal: &[JournalEntry], registry: &TopicRegistry, scope: Scope) -> Value {
    let mut out = Map::new();
    match scope {
        Scope::Group => {
            let mut subs: BTreeMap<&str, Vec<Value>> = BTreeMap::new();
            let mut msgs: BTreeMap<&str, Vec<Value>> = BTreeMap::new();
            for entry in journal {
                match entry {
                    JournalEntry::Submission { time_s, student_id, group_id, passed, error_type, error_message, group_pass_rate, .. } => {
                        subs.entry(group_id).or_default().push(json!({
                            "time": num(*time_s),
                            "student_id": student_id,
                            "results": passed,
                            "errorType": error_type.label(),
                            "errorMessage": error_message,
                            "groupPassRate": num(*group_pass_rate),
                        }))
                    }
                    JournalEntry::Chat {
                        time_s, student_id, group_id, text, category, sender_activity, sender_pass_rate, topic, group_activity, group_pass_rate,
                    } => msgs.entry(group_id).or_default().push(json!({
                        "time": num(*time_s),
                        "message": text,
                        "sender_id": student_id,
                        "senderActivityLevel": num(*sender_activity),
                        "senderPassRate": num(*sender_pass_rate),
                        "activity": category.label(),
                        "topic": registry.summary(*topic),
                        "currentActivityLevel": num(*group_activity),
                        "currentPassRate": num(*group_pass_rate),
                    })),
                }
            }
            for (id, g) in &frame.groups {
                out.insert(
                    id.clone(),
                    json!({
                        "currentStatus": {
                            "groupPassRate": num(g.group_pass_rate),
                            "teamActivity": num(g.team_activity),
                            "membersParticipatedNum": g.members_participated,
                            "topic": registry.summary(g.topic),
                        },
                        "teamMembers": g.member_ids,
                        "submissionHistory": tail(subs.remove(id.as_str()).unwrap_or_default(), MAX_SUBMISSIONS_PER_ENTITY),
                        "messageHistory": tail(msgs.remove(id.as_str()).unwrap_or_default(), MAX_MESSAGES_PER_ENTITY),
                    }),
                );
            }
            json!({ "groupHistory": out })
        }
        Scope::Individual => {
            let mut subs: BTreeMap<&str, Vec<Value>> = BTreeMap::new();
            let mut msgs: BTreeMap<&str, Vec<Value>> = BTreeMap::new();
            for entry in journal {
                match entry {
                    JournalEntry::Submission { time_s, student_id, pass_rate, error_type, error_message, .. } => {
                        subs.entry(student_id).or_default().push(json!({
                            "time": num(*time_s),
                            "passRate": num(*pass_rate),
                            "errorType": error_type.label(),
                            "errorMessage": error_message,
                        }))
                    }
                    JournalEntry::Chat { time_s, student_id, text, category, sender_activity, sender_pass_rate, topic, .. } => {
                        msgs.entry(student_id).or_default().push(json!({
                            "time": num(*time_s),
                            "message": text,
                            "activity": category.label(),
                            "currentTopic": registry.summary(*topic),
                            "currentActivityLevel": num(*sender_activity),
                            "currentPassRate": num(*sender_pass_rate),
                        }))
                    }
                }
            }
            for (id, s) in &frame.students {
                let topic = frame.groups.get(&s.group_id).map_or(TopicRef::NoConversation, |g| g.topic);
                out.insert(
                    id.clone(),
                    json!({
                        "currentStatus": {
                            "passRate": num(s.pass_rate),
                            "teamActivity": num(s.activity_level),
                            "topic": registry.summary(topic),
                        },
                        "submissionHistory": tail(subs.remove(id.as_str()).unwrap_or_default(), MAX_SUBMISSIONS_PER_ENTITY),
                        "messageHistory": tail(msgs.remove(id.as_str()).unwrap_or_default(), MAX_MESSAGES_PER_ENTITY),
                    }),
                );
            }
            json!({ "studentHistory": out })
        }
    }
}

fn payload_ids(payload: &Value, scope: Scope) -> Vec<String> {
    let key = match scope {
        Scope::Group => "groupHistory",
        Scope::Individual => "studentHistory",
    };
    payload[key].as_object().map(|m| m.keys().cloned().collect()).unwrap_or_default()
}

/// Makes a ranking complete: unknown and repeated ids are dropped, missing
/// ids are appended in input order with a placeholder issue, and ranks are
/// renumbered 1..N in list order.
pub fn repair_ranking(raw: Vec<RankedIssue>, input_ids: &[String], fallback_aspect: Aspect) -> Vec<RankedIssue> {
    let known: BTreeSet<&str> = input_ids.iter().map(String::as_str).collect();
    let mut seen = BTreeSet::new();
    let mut out: Vec<RankedIssue> = Vec::with_capacity(input_ids.len());
    for item in raw {
        if known.contains(item.entity_id.as_str()) && seen.insert(item.entity_id.clone()) {
            out.push(item);
        }
    }
    for id in input_ids {
        if seen.insert(id.clone()) {
            out.push(RankedIssue {
                rank: 0,
                entity_id: id.clone(),
                aspect: fallback_aspect,
                issue: "No issue identified.".into(),
            });
        }
    }
    for (i, item) in out.iter_mut().enumerate() {
        item.rank = i as u32 + 1;
    }
    out
}

/// Chain steps 1 and 2.
pub fn rank_issues(gateway: &Gateway, problem: &str, payload: &Value, scope: Scope) -> Result<Vec<RankedIssue>, SuggestError> {
    let ids = payload_ids(payload, scope);
    if ids.is_empty() {
        return Err(SuggestError::NoEntities);
    }
    let (task, key) = match scope {
        Scope::Group => (Task::RankGroups, "rankedGroupList"),
        Scope::Individual => (Task::RankStudents, "rankedStudentList"),
    };
    let out = gateway.complete_task(task, problem, payload.clone())?;
    let mut raw: Vec<(u64, usize, RankedIssue)> = Vec::new();
    for (pos, item) in out[key].as_array().into_iter().flatten().enumerate() {
        let Some(aspect) = item["aspect"].as_str().and_then(Aspect::from_label) else { continue };
        raw.push((
            item["rank"].as_u64().unwrap_or(u64::MAX),
            pos,
            RankedIssue {
                rank: 0,
                entity_id: item["id"].as_str().unwrap_or_default().to_owned(),
                aspect,
                issue: item["issue"].as_str().unwrap_or_default().to_owned(),
            },
        ));
    }
    // stated ranks win over list position
    raw.sort_by_key(|(rank, pos, _)| (*rank, *pos));
    Ok(repair_ranking(raw.into_iter().map(|(_, _, r)| r).collect(), &ids, Aspect::PassRate))
}

/// Chain step 3: summary of the `min(5, N)` most severe issues.
pub fn summarize_top5(gateway: &Gateway, problem: &str, ranked: &[RankedIssue], scope: Scope) -> Result<IssueSummary, SuggestError> {
    if ranked.is_empty() {
        return Err(SuggestError::NoEntities);
    }
    let (task, key) = match scope {
        Scope::Group => (Task::SummarizeGroupIssues, "groupIssueList"),
        Scope::Individual => (Task::SummarizeStudentIssues, "studentIssueList"),
    };
    let list: Vec<Value> =
        ranked.iter().take(TOP_ISSUES).map(|r| json!({ "aspect": r.aspect.label(), "issue": r.issue })).collect();
    let out = gateway.complete_task(task, problem, json!({ key: list }))?;
    let mut aspects = Vec::new();
    for label in out["summary"]["aspectList"].as_array().into_iter().flatten() {
        if let Some(a) = label.as_str().and_then(Aspect::from_label) {
            if !aspects.contains(&a) {
                aspects.push(a);
            }
        }
    }
    Ok(IssueSummary { issue_summary: out["summary"]["issueSummary"].as_str().unwrap_or_default().to_owned(), aspect_list: aspects })
}

fn numeric_value(attr: NumericAttribute, entity: EntityView<'_>) -> Option<f64> {
    match (attr, entity) {
        (NumericAttribute::PassRate, EntityView::Student(s)) => Some(s.pass_rate),
        (NumericAttribute::ActivityLevel, EntityView::Student(s)) => Some(s.activity_level),
        (NumericAttribute::PassRate, EntityView::Group(g)) => Some(g.group_pass_rate),
        (NumericAttribute::ActivityLevel, EntityView::Group(g)) => Some(g.team_activity),
        (NumericAttribute::TeamStructure, EntityView::Group(g)) => Some(g.members_participated as f64),
        (NumericAttribute::TeamStructure, EntityView::Student(_)) => None,
    }
}

/// Chain step 4. Numeric aspects become `[min, max]` over the entities'
/// current values, categorical ones the union of observed values. Aspects
/// without a counterpart in `scope` are skipped.
pub fn derive_criteria(entities: &[EntityView<'_>], aspects: &[Aspect], scope: Scope) -> Criteria {
    let mut criteria = Criteria::new(scope);
    let in_scope: Vec<EntityView<'_>> = entities
        .iter()
        .copied()
        .filter(|e| matches!((scope, e), (Scope::Group, EntityView::Group(_)) | (Scope::Individual, EntityView::Student(_))))
        .collect();
    for aspect in aspects {
        let numeric = match aspect {
            Aspect::PassRate => Some(NumericAttribute::PassRate),
            Aspect::RelatedMessages => Some(NumericAttribute::ActivityLevel),
            Aspect::Participation if scope == Scope::Group => Some(NumericAttribute::TeamStructure),
            _ => None,
        };
        if let Some(attr) = numeric {
            let values: Vec<f64> = in_scope.iter().filter_map(|e| numeric_value(attr, *e)).collect();
            if let (Some(lo), Some(hi)) =
                (values.iter().copied().reduce(f64::min), values.iter().copied().reduce(f64::max))
            {
                criteria = criteria.with_range(attr, lo, hi);
            }
            continue;
        }
        match (aspect, scope) {
            (Aspect::Topic, Scope::Group) => {
                let topics: BTreeSet<TopicRef> = in_scope
                    .iter()
                    .filter_map(|e| match e {
                        EntityView::Group(g) => Some(g.topic),
                        EntityView::Student(_) => None,
                    })
                    .collect();
                if !topics.is_empty() {
                    criteria = criteria.with_topics(topics);
                }
            }
            (Aspect::CodeIssue, Scope::Individual) => {
                let issues: BTreeSet<CodeIssue> = in_scope
                    .iter()
                    .filter_map(|e| match e {
                        EntityView::Student(s) => s.last_code_issue,
                        EntityView::Group(_) => None,
                    })
                    .collect();
                if !issues.is_empty() {
                    criteria = criteria.with_code_issues(issues);
                }
            }
            _ => {}
        }
    }
    criteria
}

/// Tracker for the categorical aspect named most often in the ranking; ties
/// and rankings without a categorical aspect fall back to vocabulary order.
pub fn suggest_tracker(ranked: &[RankedIssue], scope: Scope) -> TrackerAttribute {
    let candidates: &[(Aspect, TrackerAttribute)] = match scope {
        Scope::Group => &[(Aspect::Topic, TrackerAttribute::ConversationTopics), (Aspect::Participation, TrackerAttribute::MembersParticipated)],
        Scope::Individual => &[(Aspect::Topic, TrackerAttribute::ConversationTopics), (Aspect::CodeIssue, TrackerAttribute::CodeIssues)],
    };
    let count = |a: Aspect| ranked.iter().filter(|r| r.aspect == a).count();
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if count(c.0) > count(best.0) {
            best = *c;
        }
    }
    best.1
}

/// Immutable inputs of one chain run.
#[derive(Debug, Clone)]
pub struct ChainInput {
    pub time_s: f64,
    pub scope: Scope,
    pub problem: String,
    pub frame: Arc<SnapshotFrame>,
    pub journal: Arc<[JournalEntry]>,
    pub registry: TopicRegistry,
}

/// Runs all four steps and builds the historic draft.
pub fn run_chain(input: &ChainInput, gateway: &Gateway) -> Result<SuggestionDraft, SuggestError> {
    let payload = build_history_payload(&input.frame, &input.journal, &input.registry, input.scope);
    let ranked = rank_issues(gateway, &input.problem, &payload, input.scope)?;
    let summary = summarize_top5(gateway, &input.problem, &ranked, input.scope)?;
    let top: Vec<EntityView<'_>> = ranked
        .iter()
        .take(TOP_ISSUES)
        .filter_map(|r| match input.scope {
            Scope::Group => input.frame.groups.get(&r.entity_id).map(|g| EntityView::Group(g)),
            Scope::Individual => input.frame.students.get(&r.entity_id).map(|s| EntityView::Student(s)),
        })
        .collect();
    let criteria = derive_criteria(&top, &summary.aspect_list, input.scope);
    let reason = summary.issue_summary.clone();
    let attribute = suggest_tracker(&ranked, input.scope);
    let who = match input.scope {
        Scope::Group => "groups",
        Scope::Individual => "students",
    };
    let tracker_reason = format!("Track {} across {who}; it is the most frequent issue aspect.", tracker_label(attribute));
    Ok(SuggestionDraft {
        notification: alert_from(criteria, reason.clone(), &input.frame),
        reason,
        provenance: Provenance::HistoricBased,
        created_at_s: input.time_s,
        companion_tracker: Some(NotificationSpec::Tracker { attribute, chart: Chart::Bar, reason: tracker_reason }),
    })
}

fn tracker_label(attribute: TrackerAttribute) -> &'static str {
    match attribute {
        TrackerAttribute::CodeIssues => "code issues",
        TrackerAttribute::ConversationTopics => "conversation topics",
        TrackerAttribute::MembersParticipated => "members participated",
    }
}

/// Session-time cadence of the chain. A run due while another is still in
/// flight is skipped, not queued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionScheduler {
    pub period_s: f64,
    pub enabled: bool,
    next_due_s: f64,
    in_flight: bool,
}

impl Default for SuggestionScheduler {
    fn default() -> Self {
        Self::new(SUGGESTION_PERIOD_S)
    }
}

impl SuggestionScheduler {
    pub fn new(period_s: f64) -> Self {
        Self { period_s, enabled: true, next_due_s: period_s, in_flight: false }
    }

    /// Whether a run should start at `now_s`. Claims the slot when it
    /// returns true; [`SuggestionScheduler::finish`] releases it.
    pub fn poll(&mut self, now_s: f64) -> bool {
        if !self.enabled || now_s < self.next_due_s {
            return false;
        }
        self.next_due_s = ((now_s / self.period_s).floor() + 1.0) * self.period_s;
        if self.in_flight {
            return false;
        }
        self.in_flight = true;
        true
    }

    pub fn finish(&mut self) {
        self.in_flight = false;
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight
    }

    /// Restarts the cadence for a session rebuilt up to `now_s`.
    pub fn reset_to(&mut self, now_s: f64) {
        self.next_due_s = ((now_s / self.period_s).floor() + 1.0) * self.period_s;
        self.in_flight = false;
    }
}

/// Group and student ids present in a frame, for scope checks.
pub fn entity_ids(frame: &SnapshotFrame, scope: Scope) -> Vec<String> {
    match scope {
        Scope::Group => frame.groups.keys().cloned().collect::<Vec<GroupId>>(),
        Scope::Individual => frame.students.keys().cloned().collect::<Vec<StudentId>>(),
    }
}
