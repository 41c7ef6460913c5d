use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{ClockMode, EventRecord};

use super::engine::SessionEngine;
use super::stream::StreamMessage;
use super::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "value")]
pub enum PlaybackControl {
    Play,
    Pause,
    Seek(f64),
    SetSpeed(f64),
}

/// Wall-clock seconds from an arbitrary origin.
pub trait TimeSource: Send + Sync {
    fn now_s(&self) -> f64;
}

#[derive(Debug)]
pub struct SystemTime(Instant);

impl Default for SystemTime {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl TimeSource for SystemTime {
    fn now_s(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Time that moves only when told to.
#[derive(Debug, Default)]
pub struct ManualTime(Mutex<f64>);

impl ManualTime {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, t: f64) {
        *self.0.lock().unwrap() = t;
    }

    pub fn advance(&self, dt: f64) {
        *self.0.lock().unwrap() += dt;
    }
}

impl TimeSource for ManualTime {
    fn now_s(&self) -> f64 {
        *self.0.lock().unwrap()
    }
}

/// Plays a recorded log through an engine at a chosen speed. The engine
/// only ever sees session time, so outputs do not depend on the speed or
/// on how often [`Replayer::pump`] is called.
#[derive(Debug)]
pub struct Replayer {
    engine: SessionEngine,
    log: Vec<EventRecord>,
    cursor: usize,
    position_s: f64,
    end_s: f64,
    last_wall: Option<f64>,
}

impl Replayer {
    /// `engine` must be fresh; `log` must already be validated.
    pub fn new(engine: SessionEngine, log: Vec<EventRecord>) -> Self {
        let end_s = log.last().map_or(0.0, |e| e.time_s);
        Self { engine, log, cursor: 0, position_s: 0.0, end_s, last_wall: None }
    }

    /// Lets playback continue past the last event, up to `end_s`.
    pub fn extend_to(&mut self, end_s: f64) {
        self.end_s = self.end_s.max(end_s);
    }

    pub fn engine(&self) -> &SessionEngine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut SessionEngine {
        &mut self.engine
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s
    }

    pub fn position_s(&self) -> f64 {
        self.position_s
    }

    pub fn finished(&self) -> bool {
        self.position_s >= self.end_s && self.cursor == self.log.len()
    }

    pub fn control(&mut self, control: PlaybackControl) -> Result<(), SessionError> {
        match control {
            PlaybackControl::Play => {
                self.last_wall = None;
                self.engine.set_clock_mode(ClockMode::Replay);
            }
            PlaybackControl::Pause => self.engine.set_clock_mode(ClockMode::Paused),
            PlaybackControl::SetSpeed(speed) => self.engine.set_speed(speed)?,
            PlaybackControl::Seek(target_s) => {
                if !(0.0..=self.end_s).contains(&target_s) {
                    return Err(SessionError::SeekOutOfRange { target_s, duration_s: self.end_s });
                }
                self.engine.rebuild(&self.log, target_s)?;
                self.cursor = self.log.partition_point(|e| e.time_s <= target_s);
                self.position_s = target_s;
            }
        }
        Ok(())
    }

    /// Advances playback by the wall time elapsed since the previous call.
    pub fn pump(&mut self, wall_now_s: f64) -> Result<(), SessionError> {
        let last = self.last_wall.replace(wall_now_s);
        if self.engine.clock().mode != ClockMode::Replay {
            return Ok(());
        }
        let Some(last) = last else { return Ok(()) };
        let target = (self.position_s + (wall_now_s - last).max(0.0) * self.engine.clock().speed).min(self.end_s);
        self.seek_forward(target)?;
        if self.finished() {
            self.engine.set_clock_mode(ClockMode::Paused);
        }
        Ok(())
    }

    /// Plays forward to session time `t_s` regardless of clock mode.
    pub fn seek_forward(&mut self, t_s: f64) -> Result<(), SessionError> {
        let t_s = t_s.min(self.end_s);
        while self.cursor < self.log.len() && self.log[self.cursor].time_s <= t_s {
            let tagged = self.engine.ingest(self.log[self.cursor].clone())?;
            self.log[self.cursor] = tagged;
            self.cursor += 1;
        }
        self.engine.advance_to(t_s);
        self.position_s = self.position_s.max(t_s);
        Ok(())
    }

    /// Plays the whole log with a simulated wall clock stepping by
    /// `wall_step_s`. Returns the stream transcript.
    pub fn run_headless(&mut self, speed: f64, wall_step_s: f64) -> Result<Vec<StreamMessage>, SessionError> {
        let mut transcript = self.engine.drain_outbox();
        self.control(PlaybackControl::SetSpeed(speed))?;
        self.control(PlaybackControl::Play)?;
        let mut wall = 0.0;
        self.pump(wall)?;
        while !self.finished() {
            wall += wall_step_s;
            self.pump(wall)?;
            transcript.extend(self.engine.drain_outbox());
        }
        transcript.extend(self.engine.drain_outbox());
        Ok(transcript)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Gateway;
    use crate::model::parse_event_log_str;
    use crate::session::{EngineConfig, SessionDescriptor, SessionMode};

    const LOG: &str = r#"{"kind":"SessionStart","time_s":0}
{"kind":"Roster","time_s":0,"payload":{"groups":[{"group_id":"g1","member_ids":["a","b"]}]}}
{"kind":"ChatMessage","time_s":3,"payload":{"student_id":"a","group_id":"g1","text":"how to count"}}
{"kind":"Submission","time_s":9,"payload":{"student_id":"b","tests_passed":2,"tests_total":4,"error_type":"LogicalError","error_message":""}}
{"kind":"ChatMessage","time_s":21,"payload":{"student_id":"b","group_id":"g1","text":"use a loop"}}
"#;

    fn replayer() -> Replayer {
        let descriptor = SessionDescriptor { mode: SessionMode::Replay { log_path: "x".into() }, ..SessionDescriptor::live("r") };
        let engine = SessionEngine::new(descriptor, EngineConfig::default(), Gateway::stub(1));
        Replayer::new(engine, parse_event_log_str(LOG).unwrap())
    }

    #[test]
    fn pause_stops_time() {
        let mut r = replayer();
        r.control(PlaybackControl::Play).unwrap();
        r.pump(0.0).unwrap();
        r.pump(5.0).unwrap();
        assert_eq!(r.engine().time_s(), 5.0);
        r.control(PlaybackControl::Pause).unwrap();
        r.engine_mut().drain_outbox();
        r.pump(10.0).unwrap();
        assert_eq!(r.engine().time_s(), 5.0);
        assert!(r.engine_mut().drain_outbox().is_empty());
        r.control(PlaybackControl::Play).unwrap();
        r.pump(11.0).unwrap();
        r.pump(12.0).unwrap();
        assert_eq!(r.engine().time_s(), 6.0, "paused wall time is not replayed");
    }

    #[test]
    fn seek_bounds() {
        let mut r = replayer();
        assert!(matches!(r.control(PlaybackControl::Seek(22.0)), Err(SessionError::SeekOutOfRange { .. })));
        assert!(matches!(r.control(PlaybackControl::Seek(-1.0)), Err(SessionError::SeekOutOfRange { .. })));
        assert!(matches!(r.control(PlaybackControl::SetSpeed(0.0)), Err(SessionError::InvalidSpeed(_))));
        r.control(PlaybackControl::Seek(10.0)).unwrap();
        assert_eq!(r.engine().time_s(), 10.0);
        assert_eq!(r.engine().frame().students["b"].pass_rate, 50.0);
        r.control(PlaybackControl::Seek(21.0)).unwrap();
        r.control(PlaybackControl::Seek(5.0)).unwrap();
        assert_eq!(r.engine().frame().students["b"].pass_rate, 0.0);
        assert_eq!(r.engine().events().len(), 3);
    }

    #[test]
    fn speed_does_not_change_outputs() {
        let mut slow = replayer();
        slow.extend_to(60.0);
        let mut fast = replayer();
        fast.extend_to(60.0);
        slow.run_headless(1.0, 0.5).unwrap();
        fast.run_headless(4.0, 0.5).unwrap();
        assert_eq!(slow.engine().trigger_log(), fast.engine().trigger_log());
        let times = |r: &Replayer| r.engine().drafts().iter().map(|d| d.draft.created_at_s).collect::<Vec<_>>();
        assert_eq!(times(&slow), vec![15.0, 30.0, 45.0, 60.0]);
        assert_eq!(times(&slow), times(&fast));
        assert_eq!(slow.engine().snapshot().frame, fast.engine().snapshot().frame);
    }

    #[test]
    fn same_log_same_transcript() {
        let run = || {
            let mut r = replayer();
            r.extend_to(40.0);
            let transcript = r.run_headless(2.0, 0.5).unwrap();
            transcript.iter().map(StreamMessage::encode).collect::<Vec<_>>().join("\n")
        };
        let first = run();
        assert!(first.contains("SuggestionDraft"));
        assert_eq!(first, run());
    }
}
