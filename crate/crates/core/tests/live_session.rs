use std::sync::Arc;

use groupscope_core::fixture::{generate_fixture, FixtureConfig};
use groupscope_core::session::{
    ClientMirror, Command, CreateSession, ManualTime, ServiceConfig, SessionService, StreamMessage,
};
use groupscope_core::suggest::Provenance;
use groupscope_core::{parse_event_log_str, write_event_log, Gateway, View};

fn small_fixture() -> Vec<groupscope_core::EventRecord> {
    generate_fixture(&FixtureConfig { students: 12, duration_s: 70, seed: 3, ..FixtureConfig::default() }).unwrap().events
}

#[test]
fn fixture_log_round_trips_through_the_parser() {
    let events = small_fixture();
    assert_eq!(parse_event_log_str(&write_event_log(&events)).unwrap(), events);
}

#[test]
fn subscriber_tracks_a_live_session_with_background_jobs() {
    let time = Arc::new(ManualTime::new());
    let svc = SessionService::new(ServiceConfig::default(), Gateway::stub(8), time.clone());
    svc.create(CreateSession { session_id: Some("room".into()), ..Default::default() }).unwrap();
    let (snapshot, mut rx) = svc.subscribe("room").unwrap();
    let mut mirror = ClientMirror::new(snapshot);

    for event in small_fixture().into_iter().skip(1) {
        time.set(event.time_s);
        svc.ingest("room", event).unwrap();
        svc.wait_idle("room").unwrap();
    }
    svc.command("room", Command::SetView { view: View::IndividualView }).unwrap();
    time.set(75.0);
    svc.pump();
    svc.wait_idle("room").unwrap();

    let mut kinds = std::collections::BTreeSet::new();
    while let Ok(message) = rx.try_recv() {
        kinds.insert(match &message {
            StreamMessage::FrameDelta(_) => "delta",
            StreamMessage::TriggerEvent(_) => "trigger",
            StreamMessage::SuggestionDraft(_) => "draft",
            StreamMessage::NotificationStateChange(_) => "notification",
            StreamMessage::TopicRegistryUpdate(_) => "topics",
            StreamMessage::ClockUpdate(_) => "clock",
        });
        mirror.apply(&message);
    }
    let snapshot = svc.snapshot("room").unwrap();
    assert_eq!(mirror.state.frame.students, snapshot.frame.students);
    assert_eq!(mirror.state.frame.groups, snapshot.frame.groups);
    assert_eq!(mirror.state.frame, snapshot.frame);
    assert_eq!(mirror.state.notifications, snapshot.notifications);
    assert_eq!(mirror.state.drafts, snapshot.drafts);
    assert_eq!(mirror.state.registry, snapshot.registry);
    assert!(kinds.is_superset(&["delta", "draft", "notification", "topics", "clock"].into_iter().collect()), "{kinds:?}");
    assert!(snapshot.drafts.iter().any(|d| d.draft.provenance == Provenance::HistoricBased));
    assert!(!snapshot.registry.is_empty());
}
