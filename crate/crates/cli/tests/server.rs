use std::net::SocketAddr;
use std::process::Command as Process;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use groupscope_core::gateway::Gateway;
use groupscope_core::session::{ServiceConfig, SessionService, StreamMessage, SystemTime};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

async fn start() -> SocketAddr {
    let service = Arc::new(SessionService::new(ServiceConfig::default(), Gateway::stub(1), Arc::new(SystemTime::default())));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    groupscope::spawn_pump(service.clone());
    tokio::spawn(async move { axum::serve(listener, groupscope::router(service)).await.unwrap() });
    addr
}

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next(ws: &mut Socket) -> Result<Value, tokio::time::error::Elapsed> {
    let read = async {
        loop {
            if let Some(Ok(Message::Text(t))) = ws.next().await {
                return serde_json::from_str::<Value>(&t).unwrap();
            }
        }
    };
    tokio::time::timeout(Duration::from_secs(10), read).await
}

fn roster() -> Value {
    json!({"kind": "Roster", "time_s": 0, "payload": {"groups": [
        {"group_id": "g1", "member_ids": ["a", "b", "c"]},
        {"group_id": "g2", "member_ids": ["d", "e"]}
    ]}})
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rest_round_trip() {
    let addr = start().await;
    let http = reqwest::Client::new();
    let url = |path: &str| format!("http://{addr}{path}");

    let created = http.post(url("/sessions")).json(&json!({"session_id": "lab"})).send().await.unwrap();
    assert_eq!(created.status(), 201);
    let again = http.post(url("/sessions")).json(&json!({"session_id": "lab"})).send().await.unwrap();
    assert_eq!(again.status(), 409);

    let acks: Value = http
        .post(url("/sessions/lab/events"))
        .json(&json!([roster(), {"kind": "Submission", "time_s": 0, "payload": {
            "student_id": "a", "tests_passed": 3, "tests_total": 4, "error_type": "LogicalError", "error_message": ""}}]))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(acks.as_array().unwrap().len(), 2);
    assert_eq!(acks[1]["seq"], 3);

    let bad = http
        .post(url("/sessions/lab/events"))
        .json(&json!({"kind": "ChatMessage", "time_s": 1, "payload": {"student_id": "zz", "group_id": "g1", "text": "hi"}}))
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), 400);
    let body: Value = bad.json().await.unwrap();
    assert!(body["message"].as_str().unwrap().contains("zz"));

    let snapshot: Value = http.get(url("/sessions/lab/snapshot")).send().await.unwrap().json().await.unwrap();
    assert_eq!(snapshot["frame"]["students"]["a"]["pass_rate"], 75.0);
    assert_eq!(snapshot["frame"]["groups"].as_object().unwrap().len(), 2);

    let preview: Value = http
        .post(url("/sessions/lab/commands"))
        .json(&json!({"type": "Preview", "criteria": {"scope": "Individual",
            "numeric_ranges": {"PassRate": {"lo": 50, "hi": 100}}}}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(preview, json!({"type": "Preview", "entity_ids": ["a"]}));

    let trace = http.get(url("/sessions/lab/trace?entity=student:a&horizon_s=60")).send().await.unwrap();
    assert_eq!(trace.status(), 200);
    let trace = http.get(url("/sessions/lab/trace?entity=a")).send().await.unwrap();
    assert_eq!(trace.status(), 400);

    assert_eq!(http.get(url("/sessions/nope/snapshot")).send().await.unwrap().status(), 404);
    let not_replay = http.post(url("/sessions/lab/playback")).json(&json!({"command": "Pause"})).send().await.unwrap();
    assert_eq!(not_replay.status(), 409);
    let list: Value = http.get(url("/sessions")).send().await.unwrap().json().await.unwrap();
    assert_eq!(list[0]["session_id"], "lab");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_carries_snapshot_deltas_and_replies() {
    let addr = start().await;
    let http = reqwest::Client::new();
    http.post(format!("http://{addr}/sessions")).json(&json!({"session_id": "live"})).send().await.unwrap();
    http.post(format!("http://{addr}/sessions/live/events")).json(&roster()).send().await.unwrap();

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/live/stream")).await.unwrap();
    let first = next(&mut ws).await.unwrap();
    assert_eq!(first["kind"], "Snapshot");
    assert_eq!(first["payload"]["session_id"], "live");

    http.post(format!("http://{addr}/sessions/live/events"))
        .json(&json!({"kind": "ChatMessage", "time_s": 0, "payload": {
            "student_id": "d", "group_id": "g2", "text": "how do I loop", "category": "HelpSeeking"}}))
        .send()
        .await
        .unwrap();
    let delta = loop {
        let v = next(&mut ws).await.unwrap();
        if v["kind"] == "FrameDelta" && !v["payload"]["students"].as_array().unwrap().is_empty() {
            break v;
        }
    };
    let parsed = StreamMessage::decode(&delta.to_string()).unwrap();
    let StreamMessage::FrameDelta(delta) = parsed else { panic!("not a delta") };
    assert_eq!(delta.students[0].student_id, "d");

    ws.send(Message::Text(r#"{"type":"Command","command":{"type":"SetView","view":"StructureView"}}"#.into())).await.unwrap();
    let reply = loop {
        let v = next(&mut ws).await.unwrap();
        if v["kind"] == "CommandResult" {
            break v;
        }
    };
    assert_eq!(reply["payload"], json!({"type": "View", "view": "StructureView"}));
    ws.send(Message::Text(r#"{"type":"Playback","control":{"command":"Play"}}"#.into())).await.unwrap();
    let reply = loop {
        let v = next(&mut ws).await.unwrap();
        if v["kind"] == "Error" {
            break v;
        }
    };
    assert!(reply["payload"]["message"].as_str().unwrap().contains("not a replay"));
}

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_groupscope"))
}

#[test]
fn fixture_validate_and_headless_replay() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("session.jsonl");
    let marks = dir.path().join("students.json");
    let out = bin()
        .args(["gen-fixture", "--students", "30", "--seed", "2", "--duration", "45", "--out"])
        .arg(&log)
        .arg("--students-out")
        .arg(&marks)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let students: Value = serde_json::from_str(&std::fs::read_to_string(&marks).unwrap()).unwrap();
    assert_eq!(students.as_array().unwrap().len(), 30);

    let out = bin().arg("validate-log").arg(&log).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("10 groups, 30 students"));

    let out = bin().args(["replay", "--headless", "--speed", "4", "--until", "45", "--log"]).arg(&log).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<StreamMessage> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| StreamMessage::decode(l).unwrap()).collect();
    let drafts = lines.iter().filter(|m| matches!(m, StreamMessage::SuggestionDraft(_))).count();
    assert_eq!(drafts, 3);

    let broken = dir.path().join("broken.jsonl");
    std::fs::write(&broken, "{\"kind\":\"Roster\",\"time_s\":0,\"payload\":{\"groups\":[]}}\n").unwrap();
    let out = bin().arg("validate-log").arg(&broken).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SessionStart"));
}
