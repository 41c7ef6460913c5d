use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::metrics::{Change, EntityRef, GroupState, SnapshotFrame, StudentState};
use crate::model::SessionClock;
use crate::notify::{Notification, NotificationId, TriggerEvent};
use crate::suggest::SuggestionDraft;
use crate::topics::TopicRegistry;

use super::engine::{Command, SessionSnapshot};
use super::replay::PlaybackControl;

/// Changed entities of one frame. A `reset` delta carries every entity and
/// replaces the receiver's state (sent after a seek).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDelta {
    pub time_s: f64,
    pub change_set: Vec<Change>,
    pub students: Vec<StudentState>,
    pub groups: Vec<GroupState>,
    #[serde(default)]
    pub reset: bool,
}

impl FrameDelta {
    pub fn from_frame(frame: &SnapshotFrame) -> Self {
        let touched: BTreeSet<&EntityRef> = frame.change_set.iter().map(|c| &c.entity).collect();
        let mut students = Vec::new();
        let mut groups = Vec::new();
        for entity in touched {
            match entity {
                EntityRef::Student(id) => students.extend(frame.students.get(id).map(|s| (**s).clone())),
                EntityRef::Group(id) => groups.extend(frame.groups.get(id).map(|g| (**g).clone())),
            }
        }
        Self { time_s: frame.time_s, change_set: frame.change_set.clone(), students, groups, reset: false }
    }

    pub fn full(frame: &SnapshotFrame) -> Self {
        Self {
            time_s: frame.time_s,
            change_set: Vec::new(),
            students: frame.students.values().map(|s| (**s).clone()).collect(),
            groups: frame.groups.values().map(|g| (**g).clone()).collect(),
            reset: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftNotice {
    pub notification_id: NotificationId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion_id: Option<NotificationId>,
    pub draft: SuggestionDraft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryUpdate {
    pub time_s: f64,
    pub registry: TopicRegistry,
}

/// One outbound message of a session stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum StreamMessage {
    FrameDelta(FrameDelta),
    TriggerEvent(TriggerEvent),
    SuggestionDraft(DraftNotice),
    NotificationStateChange(Notification),
    TopicRegistryUpdate(RegistryUpdate),
    ClockUpdate(SessionClock),
}

impl StreamMessage {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("stream messages always serialize")
    }

    pub fn decode(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Inbound message on a session stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ClientMessage {
    Playback { control: PlaybackControl },
    Command { command: Command },
}

/// Client-side state rebuilt from a snapshot plus the stream that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientMirror {
    pub state: SessionSnapshot,
}

impl ClientMirror {
    pub fn new(snapshot: SessionSnapshot) -> Self {
        Self { state: snapshot }
    }

    pub fn apply(&mut self, message: &StreamMessage) {
        let state = &mut self.state;
        match message {
            StreamMessage::FrameDelta(delta) => {
                if delta.reset {
                    state.frame.students.clear();
                    state.frame.groups.clear();
                }
                for s in &delta.students {
                    state.frame.students.insert(s.student_id.clone(), s.clone().into());
                }
                for g in &delta.groups {
                    state.frame.groups.insert(g.group_id.clone(), g.clone().into());
                }
                state.frame.time_s = delta.time_s;
                state.clock.now_s = delta.time_s;
            }
            StreamMessage::TriggerEvent(_) => {}
            StreamMessage::SuggestionDraft(notice) => state.drafts.push(notice.clone()),
            StreamMessage::NotificationStateChange(n) => match state.notifications.iter_mut().find(|m| m.id() == n.id()) {
                Some(slot) => *slot = n.clone(),
                None => {
                    state.notifications.push(n.clone());
                    state.notifications.sort_by_key(Notification::id);
                }
            },
            StreamMessage::TopicRegistryUpdate(update) => state.registry = update.registry.clone(),
            StreamMessage::ClockUpdate(clock) => {
                state.clock = *clock;
                state.frame.time_s = clock.now_s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ChangeField;
    use crate::model::{ClockMode, CodeIssue, MessageCategory};
    use crate::notify::{AlertMode, Criteria, NumericAttribute, Scope, TriggerKind};
    use crate::suggest::Provenance;
    use crate::topics::{TopicId, TopicRef};
    use proptest::prelude::*;

    fn arb_f64() -> impl Strategy<Value = f64> {
        prop_oneof![(0u32..10_000).prop_map(f64::from), 0.0f64..1.0e6, Just(1.0 / 3.0), Just(100.0 / 3.0)]
    }

    fn arb_topic() -> impl Strategy<Value = TopicRef> {
        prop_oneof![Just(TopicRef::NoConversation), (0u32..50).prop_map(|i| TopicRef::Topic(TopicId(i)))]
    }

    fn arb_student() -> impl Strategy<Value = StudentState> {
        ("[a-z]{1,4}", "[a-z]{1,4}", arb_f64(), arb_f64(), prop::option::of(0usize..8), 0u32..20).prop_map(
            |(id, g, pass, act, issue, subs)| StudentState {
                student_id: id,
                group_id: g,
                pass_rate: pass,
                activity_level: act.min(12.0),
                activity_score: act,
                last_code_issue: issue.map(|i| CodeIssue::ALL[i]),
                submissions: subs,
                message_log: vec![crate::metrics::MessageEntry { time_s: act, category: MessageCategory::HelpGiving }],
            },
        )
    }

    fn arb_group() -> impl Strategy<Value = GroupState> {
        ("[a-z]{1,4}", prop::collection::vec("[a-z]{1,3}", 0..3), arb_f64(), arb_f64(), arb_topic(), 0usize..40).prop_map(
            |(id, members, pass, act, topic, count)| GroupState {
                group_id: id,
                participants: members.iter().take(2).cloned().collect(),
                members_participated: members.len().min(2),
                member_ids: members,
                group_pass_rate: pass,
                team_activity: act,
                message_count: count,
                topic,
            },
        )
    }

    fn arb_message() -> impl Strategy<Value = StreamMessage> {
        prop_oneof![
            (arb_f64(), prop::collection::vec(arb_student(), 0..3), prop::collection::vec(arb_group(), 0..3), any::<bool>())
                .prop_map(|(t, students, groups, reset)| {
                    let change_set = students
                        .iter()
                        .map(|s| Change { entity: EntityRef::Student(s.student_id.clone()), field: ChangeField::PassRate })
                        .collect();
                    StreamMessage::FrameDelta(FrameDelta { time_s: t, change_set, students, groups, reset })
                }),
            (0u32..9, arb_f64(), prop::collection::vec("[a-z0-9]{1,6}", 0..4), any::<bool>()).prop_map(|(id, t, entered, spatial)| {
                StreamMessage::TriggerEvent(TriggerEvent {
                    notification_id: NotificationId(id),
                    time_s: t,
                    entered,
                    kind: if spatial { TriggerKind::SpatialThresholdCrossed } else { TriggerKind::TemporalTimerExpired },
                })
            }),
            (0.0f64..100.0, 0.0f64..100.0, 0u32..5, arb_f64(), ".{0,20}").prop_map(|(a, b, n, t, reason)| {
                let criteria = Criteria::new(Scope::Group).with_range(NumericAttribute::PassRate, a.min(b), a.max(b));
                let notification = crate::notify::NotificationSpec::Alert {
                    criteria: criteria.clone(),
                    mode: AlertMode::Spatial { n },
                    reason: reason.clone(),
                };
                StreamMessage::SuggestionDraft(DraftNotice {
                    notification_id: NotificationId(n),
                    companion_id: None,
                    draft: SuggestionDraft {
                        notification,
                        reason: reason.clone(),
                        provenance: Provenance::InteractionBased,
                        created_at_s: t,
                        companion_tracker: None,
                    },
                })
            }),
            (0u32..9, 0.0f64..500.0, ".{0,20}").prop_map(|(id, t, reason)| {
                let mut alert = crate::notify::Alert::new(
                    NotificationId(id),
                    Criteria::new(Scope::Individual).with_code_issues([CodeIssue::TypeError]),
                    AlertMode::Temporal { t_s: t },
                    reason,
                );
                alert.episode_starts.insert("s1".into(), t / 3.0);
                StreamMessage::NotificationStateChange(Notification::Alert(alert))
            }),
            arb_f64().prop_map(|t| StreamMessage::TopicRegistryUpdate(RegistryUpdate { time_s: t, registry: TopicRegistry::new() })),
            (arb_f64(), 1u32..16, any::<bool>()).prop_map(|(t, s, paused)| {
                StreamMessage::ClockUpdate(SessionClock {
                    now_s: t,
                    speed: f64::from(s) / 4.0,
                    mode: if paused { ClockMode::Paused } else { ClockMode::Replay },
                })
            }),
        ]
    }

    proptest! {
        #[test]
        fn wire_round_trip(message in arb_message()) {
            let text = message.encode();
            let decoded = StreamMessage::decode(&text).unwrap();
            prop_assert_eq!(&decoded, &message);
            prop_assert_eq!(decoded.encode(), text);
        }
    }

    #[test]
    fn envelope_shape() {
        let clock = StreamMessage::ClockUpdate(SessionClock::new(ClockMode::Replay));
        let v: serde_json::Value = serde_json::from_str(&clock.encode()).unwrap();
        assert_eq!(v["kind"], "ClockUpdate");
        assert_eq!(v["payload"]["mode"], "Replay");
        let inbound: ClientMessage =
            serde_json::from_str(r#"{"type":"Playback","control":{"command":"Seek","value":30}}"#).unwrap();
        assert_eq!(inbound, ClientMessage::Playback { control: PlaybackControl::Seek(30.0) });
    }
}
