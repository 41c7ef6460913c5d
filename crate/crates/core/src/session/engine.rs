use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::Gateway;
use crate::metrics::{trace_history, EntityRef, MetricsState, SnapshotFrame, TracePoint};
use crate::model::{ClockMode, EventBody, EventRecord, GroupId, LogError, LogValidator, MessageCategory, SessionClock};
use crate::notify::{preview, Criteria, Notification, NotificationBook, NotificationEdit, NotificationId, NotificationSpec, Status};
use crate::suggest::{
    run_chain, suggest_from_interaction, ChainInput, InteractionContext, SuggestionDraft, SuggestionScheduler, View,
    SUGGESTION_PERIOD_S,
};
use crate::topics::{run_topic_cycle, ConversationEmbedding, TopicConfig, TopicInput, TopicRegistry, TopicUpdate};

use super::stream::{DraftNotice, FrameDelta, RegistryUpdate, StreamMessage};
use super::{SessionDescriptor, SessionError};

/// How scheduled background work (topic cycles, the suggestion chain) runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobMode {
    /// On the engine's thread at the tick that scheduled it.
    Inline,
    /// Handed out through [`SessionEngine::take_jobs`]; results come back
    /// through [`SessionEngine::complete`].
    Deferred,
    /// Not run at all; results are re-applied from the command journal.
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub tick_s: f64,
    pub topics: TopicConfig,
    pub suggestion_period_s: f64,
    pub historic_suggestions: bool,
    pub jobs: JobMode,
    /// Earlier group messages sent along when tagging a chat message.
    pub tag_context: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tick_s: 1.0,
            topics: TopicConfig::default(),
            suggestion_period_s: SUGGESTION_PERIOD_S,
            historic_suggestions: true,
            jobs: JobMode::Inline,
            tag_context: 5,
        }
    }
}

/// Instructor commands. All but `Preview` change session state and are
/// journaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Command {
    CreateNotification { spec: NotificationSpec },
    EditNotification { id: NotificationId, edit: NotificationEdit },
    Activate { id: NotificationId },
    Dismiss { id: NotificationId },
    SetView { view: View },
    Interaction { context: InteractionContext },
    Preview { criteria: Criteria },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum CommandResult {
    Notification { notification: Notification },
    View { view: View },
    Suggestion { notice: DraftNotice },
    Preview { entity_ids: Vec<String> },
}

/// Journaled state change other than an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Logged {
    Command { command: Command },
    Topics { update: TopicUpdate },
    Draft { draft: SuggestionDraft },
}

/// A [`Logged`] entry with its position in the session timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub after_events: usize,
    pub time_s: f64,
    pub entry: Logged,
}

#[derive(Debug, Clone)]
pub enum Job {
    Topics(TopicInput),
    Chain(Box<ChainInput>),
}

impl Job {
    /// Pure; safe to run on any thread.
    pub fn run(self, gateway: &Gateway, topics: &TopicConfig) -> JobResult {
        match self {
            Job::Topics(input) => JobResult::Topics(run_topic_cycle(input, gateway, topics)),
            Job::Chain(input) => match run_chain(&input, gateway) {
                Ok(draft) => JobResult::Draft(draft),
                Err(e) => JobResult::ChainFailed { time_s: input.time_s, error: e.to_string() },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobResult {
    Topics(TopicUpdate),
    Draft(SuggestionDraft),
    ChainFailed { time_s: f64, error: String },
}

/// Consistent cut of a session at one frame boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub clock: SessionClock,
    pub view: View,
    pub frame: SnapshotFrame,
    pub notifications: Vec<Notification>,
    pub registry: TopicRegistry,
    pub drafts: Vec<DraftNotice>,
}

/// Single-writer state of one session. Session time moves in ticks of
/// `tick_s`; an event at `t` is applied after every tick before `t` and
/// before the tick at `t`, so results do not depend on how time is driven.
pub struct SessionEngine {
    descriptor: SessionDescriptor,
    config: EngineConfig,
    gateway: Gateway,
    mode: JobMode,
    validator: LogValidator,
    metrics: MetricsState,
    book: NotificationBook,
    registry: TopicRegistry,
    embeddings: BTreeMap<GroupId, ConversationEmbedding>,
    scheduler: SuggestionScheduler,
    topics_in_flight: bool,
    next_tick: u64,
    view: View,
    drafts: Vec<DraftNotice>,
    frame: Arc<SnapshotFrame>,
    history: Vec<Arc<SnapshotFrame>>,
    events: Vec<EventRecord>,
    clock: SessionClock,
    emitted_time: f64,
    muted: bool,
    outbox: Vec<StreamMessage>,
    records: Vec<CommandRecord>,
    jobs: Vec<Job>,
}

impl std::fmt::Debug for SessionEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionEngine")
            .field("session_id", &self.descriptor.session_id)
            .field("time_s", &self.time_s())
            .field("events", &self.events.len())
            .finish_non_exhaustive()
    }
}

impl SessionEngine {
    /// An engine with nothing applied; the first event must be SessionStart.
    pub fn new(descriptor: SessionDescriptor, config: EngineConfig, gateway: Gateway) -> Self {
        let mut scheduler = SuggestionScheduler::new(config.suggestion_period_s);
        scheduler.enabled = config.historic_suggestions;
        let clock_mode = match descriptor.mode {
            super::SessionMode::Live => ClockMode::Live,
            super::SessionMode::Replay { .. } => ClockMode::Paused,
        };
        Self {
            descriptor,
            mode: config.jobs,
            config,
            gateway,
            validator: LogValidator::new(),
            metrics: MetricsState::new(),
            book: NotificationBook::new(),
            registry: TopicRegistry::new(),
            embeddings: BTreeMap::new(),
            scheduler,
            topics_in_flight: false,
            next_tick: 1,
            view: View::GroupView,
            drafts: Vec::new(),
            frame: Arc::new(SnapshotFrame::empty(0.0)),
            history: Vec::new(),
            events: Vec::new(),
            clock: SessionClock::new(clock_mode),
            emitted_time: 0.0,
            muted: false,
            outbox: Vec::new(),
            records: Vec::new(),
            jobs: Vec::new(),
        }
    }

    /// Rebuilds an engine from its durable logs. Journaled job results are
    /// re-applied in place instead of re-running jobs.
    pub fn restore(
        descriptor: SessionDescriptor,
        config: EngineConfig,
        gateway: Gateway,
        events: Vec<EventRecord>,
        records: Vec<CommandRecord>,
    ) -> Result<Self, SessionError> {
        let mode = config.jobs;
        let mut engine = Self::new(descriptor, config, gateway);
        engine.mode = JobMode::Recorded;
        engine.muted = true;
        let mut events = events.into_iter();
        for record in records {
            while engine.events.len() < record.after_events {
                let Some(event) = events.next() else { break };
                engine.ingest(event)?;
            }
            engine.advance_to(record.time_s);
            match record.entry {
                Logged::Command { command } => {
                    engine.command(command)?;
                }
                Logged::Topics { update } => engine.apply_topics(update),
                Logged::Draft { draft } => {
                    engine.insert_draft(draft);
                }
            }
        }
        for event in events {
            engine.ingest(event)?;
        }
        engine.mode = mode;
        engine.muted = false;
        engine.records.clear();
        engine.outbox.clear();
        engine.scheduler.reset_to(engine.time_s());
        engine.topics_in_flight = false;
        Ok(engine)
    }

    pub fn descriptor(&self) -> &SessionDescriptor {
        &self.descriptor
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Latest processed session time.
    pub fn time_s(&self) -> f64 {
        self.metrics.time_s()
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn frame(&self) -> &Arc<SnapshotFrame> {
        &self.frame
    }

    pub fn metrics(&self) -> &MetricsState {
        &self.metrics
    }

    pub fn book(&self) -> &NotificationBook {
        &self.book
    }

    pub fn registry(&self) -> &TopicRegistry {
        &self.registry
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn drafts(&self) -> &[DraftNotice] {
        &self.drafts
    }

    pub fn clock(&self) -> SessionClock {
        self.clock
    }

    /// Every trigger of every alert, in notification id order.
    pub fn trigger_log(&self) -> Vec<(NotificationId, crate::notify::TriggerRecord)> {
        let mut out = Vec::new();
        for n in self.book.iter() {
            if let Notification::Alert(a) = n {
                out.extend(a.trigger_log.iter().map(|r| (a.id, r.clone())));
            }
        }
        out
    }

    pub fn set_clock_mode(&mut self, mode: ClockMode) {
        self.clock.mode = mode;
        self.emit(StreamMessage::ClockUpdate(self.clock));
    }

    pub fn set_speed(&mut self, speed: f64) -> Result<(), SessionError> {
        if !self.clock.set_speed(speed) {
            return Err(SessionError::InvalidSpeed(speed));
        }
        self.emit(StreamMessage::ClockUpdate(self.clock));
        Ok(())
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let mut frame = (*self.frame).clone();
        frame.change_set.clear();
        SessionSnapshot {
            session_id: self.descriptor.session_id.clone(),
            clock: self.clock,
            view: self.view,
            frame,
            notifications: self.book.iter().cloned().collect(),
            registry: self.registry.clone(),
            drafts: self.drafts.clone(),
        }
    }

    pub fn trace(&self, entity: &EntityRef, horizon_s: f64) -> Result<Vec<TracePoint>, SessionError> {
        Ok(trace_history(entity, &self.history, horizon_s)?)
    }

    pub fn drain_outbox(&mut self) -> Vec<StreamMessage> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_records(&mut self) -> Vec<CommandRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn take_jobs(&mut self) -> Vec<Job> {
        std::mem::take(&mut self.jobs)
    }

    fn emit(&mut self, message: StreamMessage) {
        if !self.muted {
            self.outbox.push(message);
        }
    }

    fn record(&mut self, entry: Logged) {
        if self.mode != JobMode::Recorded {
            self.records.push(CommandRecord { after_events: self.events.len(), time_s: self.time_s(), entry });
        }
    }

    /// Validates and enriches an event, and runs every tick before its
    /// time. With `restamp`, an event stamped before the current session
    /// time but not before the last event is moved to the current time.
    pub fn prepare(&mut self, mut event: EventRecord, restamp: bool) -> Result<EventRecord, SessionError> {
        let last_s = self.events.last().map_or(0.0, |e| e.time_s);
        if event.time_s < self.time_s() {
            if restamp && event.time_s >= last_s {
                event.time_s = self.time_s();
            } else {
                return Err(SessionError::OutOfOrderEvent { time_s: event.time_s, last_s: self.time_s() });
            }
        }
        self.validator.clone().check(&event, self.events.len() + 1).map_err(|e| match e {
            LogError::NonMonotonicTime(_) => SessionError::OutOfOrderEvent { time_s: event.time_s, last_s },
            other => SessionError::Validation(other),
        })?;
        if let EventBody::ChatMessage(chat) = &mut event.body {
            if chat.category.is_none() {
                let context = self.recent_messages(&chat.group_id, self.config.tag_context);
                chat.category = Some(match self.gateway.tag_message(&chat.text, &context) {
                    Ok(category) => category,
                    Err(e) => {
                        tracing::warn!(error = %e, "message tagging failed; logged as not class related");
                        MessageCategory::NotClassRelated
                    }
                });
            }
        }
        self.run_ticks(|t| t < event.time_s);
        Ok(event)
    }

    /// Applies an event returned by [`SessionEngine::prepare`].
    pub fn commit(&mut self, event: EventRecord) -> Result<(), SessionError> {
        self.validator.check(&event, self.events.len() + 1)?;
        let frame = self.metrics.apply_event(&event)?;
        self.events.push(event);
        self.process_frame(frame);
        Ok(())
    }

    pub fn ingest(&mut self, event: EventRecord) -> Result<EventRecord, SessionError> {
        let event = self.prepare(event, false)?;
        self.commit(event.clone())?;
        Ok(event)
    }

    /// Runs every tick at or before `t_s`.
    pub fn advance_to(&mut self, t_s: f64) {
        self.run_ticks(|t| t <= t_s);
    }

    fn tick_time(&self, index: u64) -> f64 {
        index as f64 * self.config.tick_s
    }

    fn run_ticks(&mut self, due: impl Fn(f64) -> bool) {
        loop {
            let t = self.tick_time(self.next_tick);
            if !due(t) {
                break;
            }
            self.next_tick += 1;
            if t < self.time_s() {
                continue;
            }
            self.tick(t);
        }
    }

    fn tick(&mut self, t: f64) {
        let frame = self.metrics.tick(t).expect("ticks move forward");
        self.process_frame(frame);
        let period = self.config.topics.recluster_every_s;
        if period > 0.0 && !self.topics_in_flight && (t / period - (t / period).round()).abs() < 1e-9 {
            let input = TopicInput {
                time_s: t,
                conversations: self.conversations(),
                registry: self.registry.clone(),
                embeddings: self.embeddings.clone(),
            };
            self.topics_in_flight = true;
            self.dispatch(Job::Topics(input));
        }
        if self.scheduler.poll(t) {
            let input = ChainInput {
                time_s: t,
                scope: self.view.scope(),
                problem: self.descriptor.exercise.prompt.clone(),
                frame: self.frame.clone(),
                journal: self.metrics.journal().to_vec().into(),
                registry: self.registry.clone(),
            };
            self.dispatch(Job::Chain(Box::new(input)));
        }
    }

    fn dispatch(&mut self, job: Job) {
        match self.mode {
            JobMode::Inline => {
                let result = job.run(&self.gateway, &self.config.topics);
                self.complete(result);
            }
            JobMode::Deferred => self.jobs.push(job),
            JobMode::Recorded => match job {
                Job::Topics(_) => self.topics_in_flight = false,
                Job::Chain(_) => self.scheduler.finish(),
            },
        }
    }

    /// Applies the result of a job handed out earlier.
    pub fn complete(&mut self, result: JobResult) {
        match result {
            JobResult::Topics(update) => {
                self.topics_in_flight = false;
                self.record(Logged::Topics { update: update.clone() });
                self.apply_topics(update);
            }
            JobResult::Draft(draft) => {
                self.scheduler.finish();
                self.record(Logged::Draft { draft: draft.clone() });
                self.insert_draft(draft);
            }
            JobResult::ChainFailed { time_s, error } => {
                self.scheduler.finish();
                tracing::warn!(time_s, %error, "suggestion chain failed");
            }
        }
    }

    fn conversations(&self) -> BTreeMap<GroupId, Vec<String>> {
        let mut out: BTreeMap<GroupId, Vec<String>> = self.frame.groups.keys().map(|g| (g.clone(), Vec::new())).collect();
        for entry in self.metrics.journal() {
            if let crate::metrics::JournalEntry::Chat { group_id, text, .. } = entry {
                out.entry(group_id.clone()).or_default().push(text.clone());
            }
        }
        out
    }

    fn recent_messages(&self, group: &str, limit: usize) -> Vec<String> {
        let mut texts: Vec<String> = self
            .metrics
            .journal()
            .iter()
            .rev()
            .filter_map(|e| match e {
                crate::metrics::JournalEntry::Chat { group_id, text, .. } if group_id == group => Some(text.clone()),
                _ => None,
            })
            .take(limit)
            .collect();
        texts.reverse();
        texts
    }

    fn apply_topics(&mut self, update: TopicUpdate) {
        let changed = self.registry != update.registry;
        self.registry = update.registry;
        self.embeddings = update.embeddings;
        if changed {
            let message = StreamMessage::TopicRegistryUpdate(RegistryUpdate { time_s: self.time_s(), registry: self.registry.clone() });
            self.emit(message);
        }
        match self.metrics.set_topics(self.time_s(), &update.assignments) {
            Ok(frame) => self.process_frame(frame),
            Err(e) => tracing::warn!(error = %e, "topic assignments rejected"),
        }
    }

    fn insert_draft(&mut self, draft: SuggestionDraft) -> Option<DraftNotice> {
        let id = match self.book.create(draft.notification.clone()) {
            Ok(n) => n.id(),
            Err(e) => {
                tracing::warn!(error = %e, "suggestion dropped");
                return None;
            }
        };
        let companion_id = draft.companion_tracker.clone().and_then(|spec| self.book.create(spec).ok().map(|n| n.id()));
        let notice = DraftNotice { notification_id: id, companion_id, draft };
        self.drafts.push(notice.clone());
        self.emit(StreamMessage::SuggestionDraft(notice.clone()));
        for id in std::iter::once(id).chain(companion_id) {
            let n = self.book.get(id).expect("just created").clone();
            self.emit(StreamMessage::NotificationStateChange(n));
        }
        Some(notice)
    }

    fn process_frame(&mut self, frame: SnapshotFrame) {
        let frame = Arc::new(frame);
        if !frame.change_set.is_empty() {
            self.emit(StreamMessage::FrameDelta(FrameDelta::from_frame(&frame)));
            self.history.push(frame.clone());
            self.clock.now_s = frame.time_s;
            self.emitted_time = frame.time_s;
        } else if frame.time_s != self.emitted_time {
            self.clock.now_s = frame.time_s;
            self.emitted_time = frame.time_s;
            self.emit(StreamMessage::ClockUpdate(self.clock));
        }
        let before: Vec<Notification> = self.book.iter().filter(|n| n.status() == Status::Active).cloned().collect();
        let triggers = self.book.evaluate(&frame);
        for trigger in triggers {
            self.emit(StreamMessage::TriggerEvent(trigger));
        }
        for old in before {
            let now = self.book.get(old.id()).expect("notifications are never removed");
            if *now != old {
                let message = StreamMessage::NotificationStateChange(now.clone());
                self.emit(message);
            }
        }
        self.frame = frame;
    }

    pub fn command(&mut self, command: Command) -> Result<CommandResult, SessionError> {
        let result = match &command {
            Command::Preview { criteria } => {
                criteria.validate()?;
                return Ok(CommandResult::Preview { entity_ids: preview(criteria, &self.frame) });
            }
            Command::CreateNotification { spec } => self.book.create(spec.clone())?.clone(),
            Command::EditNotification { id, edit } => self.book.edit(*id, edit.clone())?.clone(),
            Command::Activate { id } => self.book.activate(*id)?.clone(),
            Command::Dismiss { id } => self.book.dismiss(*id)?.clone(),
            Command::SetView { view } => {
                self.view = *view;
                self.record(Logged::Command { command: command.clone() });
                return Ok(CommandResult::View { view: *view });
            }
            Command::Interaction { context } => {
                let draft = suggest_from_interaction(context, &self.frame, &self.registry)?;
                let notice = self.insert_draft(draft).ok_or(SessionError::Storage("suggestion rejected".into()))?;
                self.record(Logged::Command { command: command.clone() });
                return Ok(CommandResult::Suggestion { notice });
            }
        };
        self.record(Logged::Command { command });
        self.emit(StreamMessage::NotificationStateChange(result.clone()));
        Ok(CommandResult::Notification { notification: result })
    }

    /// Recomputes all frame-derived state from `events` up to `t_s`.
    /// Notification configuration, drafts and the view are kept; the
    /// suggestion chain does not re-run for the rebuilt span.
    pub fn rebuild(&mut self, events: &[EventRecord], t_s: f64) -> Result<(), SessionError> {
        self.validator = LogValidator::new();
        self.metrics = MetricsState::new();
        self.registry = TopicRegistry::new();
        self.embeddings.clear();
        self.book.reset_runtime();
        self.topics_in_flight = false;
        self.next_tick = 1;
        self.frame = Arc::new(SnapshotFrame::empty(0.0));
        self.history.clear();
        self.events.clear();
        self.emitted_time = 0.0;
        let enabled = self.scheduler.enabled;
        self.scheduler.enabled = false;
        self.muted = true;
        let mode = self.mode;
        if mode == JobMode::Deferred {
            self.mode = JobMode::Inline;
        }
        let mut result = Ok(());
        for event in events.iter().take_while(|e| e.time_s <= t_s) {
            if let Err(e) = self.ingest(event.clone()) {
                result = Err(e);
                break;
            }
        }
        self.advance_to(t_s);
        self.mode = mode;
        self.muted = false;
        self.scheduler.enabled = enabled;
        self.scheduler.reset_to(self.time_s());
        self.clock.now_s = self.time_s();
        self.emitted_time = self.time_s();
        self.emit(StreamMessage::FrameDelta(FrameDelta::full(&self.frame)));
        self.emit(StreamMessage::TopicRegistryUpdate(RegistryUpdate { time_s: self.time_s(), registry: self.registry.clone() }));
        let all: Vec<Notification> = self.book.iter().cloned().collect();
        for n in all {
            self.emit(StreamMessage::NotificationStateChange(n));
        }
        self.emit(StreamMessage::ClockUpdate(self.clock));
        result
    }
}
