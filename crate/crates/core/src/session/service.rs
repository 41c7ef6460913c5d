use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

use crate::gateway::Gateway;
use crate::metrics::{EntityRef, TracePoint};
use crate::model::{parse_event_log, EventRecord, SessionClock};

use super::engine::{Command, CommandRecord, CommandResult, EngineConfig, JobMode, SessionEngine, SessionSnapshot};
use super::replay::{PlaybackControl, Replayer, TimeSource};
use super::stream::StreamMessage;
use super::{Exercise, SessionDescriptor, SessionError, SessionMode};

const DESCRIPTOR_FILE: &str = "session.json";
const EVENTS_FILE: &str = "events.jsonl";
const COMMANDS_FILE: &str = "commands.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// Root for durable session logs; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub engine: EngineConfig,
    /// Job mode of live sessions. Replays always run jobs inline.
    pub live_jobs: JobMode,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { data_dir: None, engine: EngineConfig::default(), live_jobs: JobMode::Deferred }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub exercise: Option<Exercise>,
    #[serde(default)]
    pub mode: Option<SessionMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestAck {
    pub session_id: String,
    /// 1-based position of the event in the session log.
    pub seq: usize,
    /// Time the event was applied at (live events stamped behind the
    /// session clock are moved up to it).
    pub time_s: f64,
}

enum Driver {
    Live { engine: SessionEngine, wall_origin: f64 },
    Replay(Replayer),
}

impl Driver {
    fn engine(&self) -> &SessionEngine {
        match self {
            Driver::Live { engine, .. } => engine,
            Driver::Replay(r) => r.engine(),
        }
    }

    fn engine_mut(&mut self) -> &mut SessionEngine {
        match self {
            Driver::Live { engine, .. } => engine,
            Driver::Replay(r) => r.engine_mut(),
        }
    }
}

struct Slot {
    driver: Driver,
    store: Option<Store>,
    subscribers: Vec<UnboundedSender<StreamMessage>>,
    running_jobs: usize,
}

struct Handle {
    slot: Mutex<Slot>,
    idle: Condvar,
}

impl Handle {
    fn lock(&self) -> MutexGuard<'_, Slot> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Append-only files of one session.
struct Store {
    events: File,
    commands: File,
}

impl Store {
    fn create(dir: &Path, descriptor: &SessionDescriptor) -> Result<Self, SessionError> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{DESCRIPTOR_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(descriptor).expect("descriptor serializes"))?;
        fs::rename(&tmp, dir.join(DESCRIPTOR_FILE))?;
        Self::open_files(dir)
    }

    fn open_files(dir: &Path) -> Result<Self, SessionError> {
        let open = |name: &str| OpenOptions::new().create(true).append(true).open(dir.join(name));
        Ok(Self { events: open(EVENTS_FILE)?, commands: open(COMMANDS_FILE)? })
    }

    fn append_event(&mut self, event: &EventRecord) -> Result<(), SessionError> {
        let mut line = event.to_json_line();
        line.push('\n');
        self.events.write_all(line.as_bytes())?;
        Ok(())
    }

    fn append_record(&mut self, record: &CommandRecord) -> Result<(), SessionError> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        self.commands.write_all(line.as_bytes())?;
        Ok(())
    }
}

/// Reads a JSON Lines file. A torn final line (no trailing newline, not
/// parseable) is cut off; any other bad line is an error.
fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, SessionError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    let mut offset = 0;
    for (idx, line) in text.split_inclusive('\n').enumerate() {
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            offset += line.len();
            continue;
        }
        match serde_json::from_str(line.trim_end()) {
            Ok(v) if complete => out.push(v),
            _ if !complete => {
                tracing::warn!(path = %path.display(), line = idx + 1, "dropping torn final line");
                OpenOptions::new().write(true).open(path)?.set_len(offset as u64)?;
                break;
            }
            Ok(_) => unreachable!(),
            Err(e) => return Err(SessionError::Storage(format!("{}: line {}: {e}", path.display(), idx + 1))),
        }
        offset += line.len();
    }
    Ok(out)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// All sessions of one process. Each session is a single writer behind its
/// own lock; sessions proceed independently.
pub struct SessionService {
    config: ServiceConfig,
    gateway: Gateway,
    time: Arc<dyn TimeSource>,
    sessions: RwLock<BTreeMap<String, Arc<Handle>>>,
    counter: Mutex<u64>,
}

impl std::fmt::Debug for SessionService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionService").field("config", &self.config).finish_non_exhaustive()
    }
}

impl SessionService {
    pub fn new(config: ServiceConfig, gateway: Gateway, time: Arc<dyn TimeSource>) -> Self {
        Self { config, gateway, time, sessions: RwLock::new(BTreeMap::new()), counter: Mutex::new(0) }
    }

    /// A service with every session found under `data_dir` recovered.
    pub fn open(config: ServiceConfig, gateway: Gateway, time: Arc<dyn TimeSource>) -> Result<Self, SessionError> {
        let service = Self::new(config, gateway, time);
        if let Some(root) = service.sessions_root() {
            if root.is_dir() {
                let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
                dirs.sort();
                for dir in dirs.into_iter().filter(|d| d.join(DESCRIPTOR_FILE).is_file()) {
                    let handle = service.recover(&dir)?;
                    let id = handle.lock().driver.engine().descriptor().session_id.clone();
                    tracing::info!(session = %id, "recovered session");
                    service.sessions.write().unwrap().insert(id, handle);
                }
            }
        }
        Ok(service)
    }

    fn sessions_root(&self) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("sessions"))
    }

    fn engine_config(&self, mode: &SessionMode) -> EngineConfig {
        let mut config = self.config.engine.clone();
        config.jobs = match mode {
            SessionMode::Live => self.config.live_jobs,
            SessionMode::Replay { .. } => JobMode::Inline,
        };
        config
    }

    fn load_replay(&self, descriptor: SessionDescriptor, path: &Path) -> Result<Replayer, SessionError> {
        let file = File::open(path).map_err(|e| SessionError::Storage(format!("{}: {e}", path.display())))?;
        let log = parse_event_log(std::io::BufReader::new(file))?;
        let config = self.engine_config(&descriptor.mode);
        Ok(Replayer::new(SessionEngine::new(descriptor, config, self.gateway.session_handle()), log))
    }

    fn recover(&self, dir: &Path) -> Result<Arc<Handle>, SessionError> {
        let descriptor: SessionDescriptor = serde_json::from_slice(&fs::read(dir.join(DESCRIPTOR_FILE))?)
            .map_err(|e| SessionError::Storage(format!("{}: {e}", dir.display())))?;
        let events: Vec<EventRecord> = read_lines(&dir.join(EVENTS_FILE))?;
        let records: Vec<CommandRecord> = read_lines(&dir.join(COMMANDS_FILE))?;
        let driver = match &descriptor.mode {
            SessionMode::Live => {
                let config = self.engine_config(&descriptor.mode);
                let engine = SessionEngine::restore(descriptor, config, self.gateway.session_handle(), events, records)?;
                Driver::Live { wall_origin: self.time.now_s() - engine.time_s(), engine }
            }
            SessionMode::Replay { log_path } => {
                let log_path = log_path.clone();
                Driver::Replay(self.load_replay(descriptor, &log_path)?)
            }
        };
        Ok(Arc::new(Handle {
            slot: Mutex::new(Slot { driver, store: Some(Store::open_files(dir)?), subscribers: Vec::new(), running_jobs: 0 }),
            idle: Condvar::new(),
        }))
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>, SessionError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| SessionError::UnknownSession(id.to_owned()))
    }

    fn fresh_id(&self) -> String {
        let sessions = self.sessions.read().unwrap();
        let mut counter = self.counter.lock().unwrap();
        loop {
            *counter += 1;
            let id = format!("s{}", *counter);
            if !sessions.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn create(&self, request: CreateSession) -> Result<SessionDescriptor, SessionError> {
        let session_id = match request.session_id {
            Some(id) if !valid_id(&id) => return Err(SessionError::InvalidSessionId(id)),
            Some(id) => id,
            None => self.fresh_id(),
        };
        let descriptor = SessionDescriptor {
            session_id: session_id.clone(),
            exercise: request.exercise.unwrap_or_default(),
            created_at: unix_now(),
            mode: request.mode.unwrap_or(SessionMode::Live),
        };
        let mut sessions = self.sessions.write().unwrap();
        if sessions.contains_key(&session_id) {
            return Err(SessionError::SessionExists(session_id));
        }
        let driver = match &descriptor.mode {
            SessionMode::Live => Driver::Live {
                engine: SessionEngine::new(descriptor.clone(), self.engine_config(&descriptor.mode), self.gateway.session_handle()),
                wall_origin: self.time.now_s(),
            },
            SessionMode::Replay { log_path } => Driver::Replay(self.load_replay(descriptor.clone(), log_path)?),
        };
        let store = match self.sessions_root() {
            Some(root) => {
                let dir = root.join(&session_id);
                if dir.exists() {
                    return Err(SessionError::SessionExists(session_id));
                }
                Some(Store::create(&dir, &descriptor)?)
            }
            None => None,
        };
        let handle = Arc::new(Handle {
            slot: Mutex::new(Slot { driver, store, subscribers: Vec::new(), running_jobs: 0 }),
            idle: Condvar::new(),
        });
        if matches!(descriptor.mode, SessionMode::Live) {
            let mut slot = handle.lock();
            Self::ingest_locked(&handle, &mut slot, EventRecord::session_start())?;
        }
        sessions.insert(session_id, handle);
        Ok(descriptor)
    }

    pub fn list(&self) -> Vec<SessionDescriptor> {
        self.sessions.read().unwrap().values().map(|h| h.lock().driver.engine().descriptor().clone()).collect()
    }

    pub fn descriptor(&self, id: &str) -> Result<SessionDescriptor, SessionError> {
        Ok(self.handle(id)?.lock().driver.engine().descriptor().clone())
    }

    /// Validates, logs, then applies one live event. The log append comes
    /// before application, so a crash never loses an applied event.
    pub fn ingest(&self, id: &str, event: EventRecord) -> Result<IngestAck, SessionError> {
        let handle = self.handle(id)?;
        let mut slot = handle.lock();
        let wall = self.time.now_s();
        if let Driver::Live { engine, wall_origin } = &mut slot.driver {
            engine.advance_to(wall - *wall_origin);
        }
        Self::ingest_locked(&handle, &mut slot, event)
    }

    fn ingest_locked(handle: &Arc<Handle>, slot: &mut Slot, event: EventRecord) -> Result<IngestAck, SessionError> {
        let Driver::Live { engine, .. } = &mut slot.driver else { return Err(SessionError::SessionNotLive) };
        let event = engine.prepare(event, true);
        Self::flush(handle, slot)?;
        let event = event?;
        if let Some(store) = slot.store.as_mut() {
            store.append_event(&event)?;
        }
        let engine = slot.driver.engine_mut();
        engine.commit(event.clone())?;
        let ack = IngestAck { session_id: engine.descriptor().session_id.clone(), seq: engine.events().len(), time_s: event.time_s };
        Self::flush(handle, slot)?;
        Ok(ack)
    }

    pub fn command(&self, id: &str, command: Command) -> Result<CommandResult, SessionError> {
        let handle = self.handle(id)?;
        let mut slot = handle.lock();
        let result = slot.driver.engine_mut().command(command);
        Self::flush(&handle, &mut slot)?;
        result
    }

    pub fn control(&self, id: &str, control: PlaybackControl) -> Result<SessionClock, SessionError> {
        let handle = self.handle(id)?;
        let mut slot = handle.lock();
        let Driver::Replay(replayer) = &mut slot.driver else { return Err(SessionError::NotReplay) };
        let result = replayer.control(control);
        if result.is_ok() && control == PlaybackControl::Play {
            replayer.pump(self.time.now_s())?;
        }
        let clock = replayer.engine().clock();
        Self::flush(&handle, &mut slot)?;
        result.map(|()| clock)
    }

    pub fn snapshot(&self, id: &str) -> Result<SessionSnapshot, SessionError> {
        Ok(self.handle(id)?.lock().driver.engine().snapshot())
    }

    pub fn trace(&self, id: &str, entity: &EntityRef, horizon_s: f64) -> Result<Vec<TracePoint>, SessionError> {
        self.handle(id)?.lock().driver.engine().trace(entity, horizon_s)
    }

    /// A consistent snapshot plus every message emitted after it.
    pub fn subscribe(&self, id: &str) -> Result<(SessionSnapshot, UnboundedReceiver<StreamMessage>), SessionError> {
        let handle = self.handle(id)?;
        let mut slot = handle.lock();
        let (tx, rx) = unbounded_channel();
        slot.subscribers.push(tx);
        Ok((slot.driver.engine().snapshot(), rx))
    }

    /// Moves every session's clock to the current wall time.
    pub fn pump(&self) {
        let wall = self.time.now_s();
        let handles: Vec<Arc<Handle>> = self.sessions.read().unwrap().values().cloned().collect();
        for handle in handles {
            let mut slot = handle.lock();
            let result = match &mut slot.driver {
                Driver::Live { engine, wall_origin } => {
                    engine.advance_to(wall - *wall_origin);
                    Ok(())
                }
                Driver::Replay(replayer) => replayer.pump(wall),
            };
            if let Err(e) = result.and_then(|()| Self::flush(&handle, &mut slot)) {
                tracing::error!(error = %e, "session pump failed");
            }
        }
    }

    /// Blocks until no background job of the session is running.
    pub fn wait_idle(&self, id: &str) -> Result<(), SessionError> {
        let handle = self.handle(id)?;
        let mut slot = handle.lock();
        while slot.running_jobs > 0 {
            slot = handle.idle.wait(slot).unwrap_or_else(|e| e.into_inner());
        }
        Ok(())
    }

    /// Journals records, starts deferred jobs, and fans out messages.
    fn flush(handle: &Arc<Handle>, slot: &mut Slot) -> Result<(), SessionError> {
        let engine = slot.driver.engine_mut();
        let records = engine.take_records();
        let jobs = engine.take_jobs();
        let messages = engine.drain_outbox();
        let gateway = engine.gateway().clone();
        let topics = engine.config().topics.clone();
        if let Some(store) = slot.store.as_mut() {
            for record in &records {
                store.append_record(record)?;
            }
        }
        for job in jobs {
            slot.running_jobs += 1;
            let handle = handle.clone();
            let gateway = gateway.clone();
            let topics = topics.clone();
            std::thread::spawn(move || {
                let result = job.run(&gateway, &topics);
                let mut slot = handle.lock();
                slot.driver.engine_mut().complete(result);
                slot.running_jobs -= 1;
                if let Err(e) = Self::flush(&handle, &mut slot) {
                    tracing::error!(error = %e, "could not journal job result");
                }
                handle.idle.notify_all();
            });
        }
        if !messages.is_empty() {
            slot.subscribers.retain(|tx| messages.iter().all(|m| tx.send(m.clone()).is_ok()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChatPayload, EventBody, RosterGroup, RosterPayload};
    use crate::session::{ClientMirror, ManualTime};

    fn roster() -> EventRecord {
        EventRecord::new(
            0.0,
            EventBody::Roster(RosterPayload {
                groups: vec![RosterGroup { group_id: "g1".into(), member_ids: vec!["a".into(), "b".into()] }],
            }),
        )
    }

    fn chat(t: f64, text: &str) -> EventRecord {
        EventRecord::new(t, EventBody::ChatMessage(ChatPayload { student_id: "a".into(), group_id: "g1".into(), text: text.into(), category: None }))
    }

    fn service(dir: Option<&Path>, time: Arc<ManualTime>) -> SessionService {
        let config = ServiceConfig { data_dir: dir.map(Path::to_path_buf), ..ServiceConfig::default() };
        SessionService::open(config, Gateway::stub(0), time).unwrap()
    }

    #[test]
    fn lifecycle_and_errors() {
        let time = Arc::new(ManualTime::new());
        let svc = service(None, time);
        let d = svc.create(CreateSession::default()).unwrap();
        assert_eq!(d.session_id, "s1");
        assert!(matches!(svc.create(CreateSession { session_id: Some("s1".into()), ..Default::default() }), Err(SessionError::SessionExists(_))));
        assert!(matches!(svc.create(CreateSession { session_id: Some("../x".into()), ..Default::default() }), Err(SessionError::InvalidSessionId(_))));
        assert!(matches!(svc.snapshot("nope"), Err(SessionError::UnknownSession(_))));
        let snap = svc.snapshot("s1").unwrap();
        assert!(snap.frame.students.is_empty() && snap.notifications.is_empty());
        assert!(matches!(svc.control("s1", PlaybackControl::Play), Err(SessionError::NotReplay)));
        let (_, mut rx) = svc.subscribe("s1").unwrap();
        svc.ingest("s1", roster()).unwrap();
        let ack = svc.ingest("s1", chat(2.0, "hello")).unwrap();
        assert_eq!(ack.seq, 3);
        let mut deltas = 0;
        while let Ok(m) = rx.try_recv() {
            deltas += usize::from(matches!(m, StreamMessage::FrameDelta(_)));
        }
        assert_eq!(deltas, 2);
        assert!(matches!(svc.ingest("s1", chat(1.0, "late")), Err(SessionError::OutOfOrderEvent { .. })));
    }

    #[test]
    fn wall_clock_drives_live_sessions() {
        let time = Arc::new(ManualTime::new());
        let svc = service(None, time.clone());
        svc.create(CreateSession::default()).unwrap();
        svc.ingest("s1", roster()).unwrap();
        time.set(16.5);
        svc.pump();
        svc.wait_idle("s1").unwrap();
        let snap = svc.snapshot("s1").unwrap();
        assert_eq!(snap.frame.time_s, 16.0);
        assert_eq!(snap.drafts.len(), 1);
        let ack = svc.ingest("s1", chat(12.0, "stamped behind the clock")).unwrap();
        assert_eq!(ack.time_s, 16.0);
    }

    #[test]
    fn recovery_restores_live_state() {
        let dir = tempfile::tempdir().unwrap();
        let time = Arc::new(ManualTime::new());
        let svc = service(Some(dir.path()), time.clone());
        svc.create(CreateSession { session_id: Some("lab".into()), ..Default::default() }).unwrap();
        svc.ingest("lab", roster()).unwrap();
        svc.ingest("lab", chat(4.0, "how do I count")).unwrap();
        time.set(31.0);
        svc.pump();
        svc.wait_idle("lab").unwrap();
        svc.command("lab", Command::SetView { view: crate::suggest::View::IndividualView }).unwrap();
        svc.ingest("lab", chat(33.0, "with a loop")).unwrap();
        let before = svc.snapshot("lab").unwrap();
        std::mem::forget(svc);

        let events_path = dir.path().join("sessions/lab").join(EVENTS_FILE);
        let mut f = OpenOptions::new().append(true).open(&events_path).unwrap();
        f.write_all(br#"{"kind":"ChatMessage","time_s":40,"pay"#).unwrap();

        let back = service(Some(dir.path()), time);
        let after = back.snapshot("lab").unwrap();
        assert_eq!(after, before);
        assert!(!fs::read_to_string(&events_path).unwrap().contains("\"pay\n"));
        back.ingest("lab", chat(40.0, "ok")).unwrap();
    }

    #[test]
    fn subscribers_reconstruct() {
        let time = Arc::new(ManualTime::new());
        let svc = service(None, time.clone());
        svc.create(CreateSession::default()).unwrap();
        let (snap, mut rx) = svc.subscribe("s1").unwrap();
        let mut mirror = ClientMirror::new(snap);
        svc.ingest("s1", roster()).unwrap();
        svc.ingest("s1", chat(3.0, "loop list count")).unwrap();
        time.set(20.0);
        svc.pump();
        svc.wait_idle("s1").unwrap();
        while let Ok(m) = rx.try_recv() {
            mirror.apply(&m);
        }
        assert_eq!(mirror.state, svc.snapshot("s1").unwrap());
    }
}
