//! Session orchestration and the message channel spoken by practice clients.
//!
//! A client exchanges JSON records, one per line, each carrying the schema
//! version `v`. The engine's clock is the only clock: the caller passes the
//! session time to [`Session::pump`], frames are stamped on arrival, and
//! every outbound record carries the session time it refers to plus the
//! `cause` that released it: `in:<n>` for the n-th inbound record of the
//! session or `tick:<k>` for the scheduled processing at the end of the k-th
//! pump. See `docs/channel.md` for the full schema.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::device::{ActuatorCommand, Clutch, DeviceSim};
use crate::score::{load_score, BUNDLED_SONG_A, BUNDLED_SONG_B, FingeringChart, Pitch, Score, HOLES};
use crate::sensing::{EventDetector, PitchEvent, SensorFrame};
use crate::simlab::pass_duration_ms;
use crate::strategy::{grade_exam, learning_rate, PassOutcome, Phase, PhaseTable, StrategyKind};
use crate::tutor::{schedule, Slot, TickOutput, TutorSession};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown score '{0}'")]
    UnknownScore(String),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session clock went back from {last} ms to {now} ms")]
    ClockRegression { now: u64, last: u64 },
    #[error("score '{id}': {message}")]
    BadScore { id: String, message: String },
    #[error("internal engine error: {0}")]
    Engine(String),
    #[error("recording line {line}: {message}")]
    Recording { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Running,
    Exam,
    Done,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Idle => "idle",
            SessionState::Running => "running",
            SessionState::Exam => "exam",
            SessionState::Done => "done",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Client to engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    Start,
    Stop,
    /// Normalised hole coverage, 1 = covered; stamped with the session time.
    Frame { values: [f64; HOLES] },
    PhaseOverride { phase: Phase },
    ExamRequest,
    /// Asks for a full snapshot, e.g. after a reconnect.
    Hello,
}

impl Inbound {
    pub fn name(&self) -> &'static str {
        match self {
            Inbound::Start => "start",
            Inbound::Stop => "stop",
            Inbound::Frame { .. } => "frame",
            Inbound::PhaseOverride { .. } => "phase_override",
            Inbound::ExamRequest => "exam_request",
            Inbound::Hello => "hello",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InboundMessage {
    pub v: u32,
    #[serde(flatten)]
    pub body: Inbound,
}

impl InboundMessage {
    pub fn new(body: Inbound) -> Self {
        Self {
            v: SCHEMA_VERSION,
            body,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("inbound serializes")
    }
}

/// Per-pass summary, and the final verdict once the session is done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pass: usize,
    pub phase: Phase,
    pub mistakes: usize,
    pub notes: usize,
    pub duration_ms: u64,
    pub exam_pass: Option<bool>,
    pub forgotten: Option<usize>,
    pub next_phase: Option<Phase>,
    pub learning_ms: u64,
    pub done: bool,
    pub learning_rate: Option<f64>,
}

/// Engine to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Session {
        id: u64,
        score: String,
        strategy: StrategyKind,
        phases: Vec<Phase>,
        phase: Phase,
        state: SessionState,
        pass: usize,
    },
    State {
        state: SessionState,
    },
    OnsetCue {
        pass: usize,
        note: usize,
        pitch: Pitch,
    },
    HintCue {
        pass: usize,
        fingers: Vec<usize>,
        targets: Vec<Clutch>,
        pulse_ms: Option<u64>,
    },
    ClutchState {
        clutches: [Clutch; HOLES],
    },
    Mistake {
        pass: usize,
        note: usize,
        score_time_ms: u64,
    },
    Metrics(Metrics),
    PhaseChange {
        from: Phase,
        to: Phase,
        reason: String,
    },
    Rejected {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutboundMessage {
    pub v: u32,
    pub t: u64,
    pub cause: String,
    #[serde(flatten)]
    pub body: Outbound,
}

impl OutboundMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("outbound serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        serde_json::from_str(line).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionDescriptor {
    pub id: u64,
    pub score_id: String,
    pub strategy: StrategyKind,
    pub config: EngineConfig,
    pub phase: Phase,
    pub state: SessionState,
}

/// Named scores a session can be created for.
#[derive(Debug, Clone)]
pub struct ScoreLibrary {
    chart: FingeringChart,
    scores: BTreeMap<String, Score>,
}

impl ScoreLibrary {
    pub fn new(chart: FingeringChart) -> Self {
        Self {
            chart,
            scores: BTreeMap::new(),
        }
    }

    /// The two bundled study songs under the ids `a` and `b`.
    pub fn bundled() -> Self {
        let mut lib = Self::new(FingeringChart::default_chart());
        lib.insert_text("a", BUNDLED_SONG_A).expect("bundled song a");
        lib.insert_text("b", BUNDLED_SONG_B).expect("bundled song b");
        lib
    }

    pub fn insert_text(&mut self, id: &str, text: &str) -> Result<(), ServiceError> {
        let score = load_score(text, &self.chart).map_err(|e| ServiceError::BadScore {
            id: id.to_string(),
            message: e.to_string(),
        })?;
        self.scores.insert(id.to_string(), score);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Score> {
        self.scores.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn chart(&self) -> &FingeringChart {
        &self.chart
    }
}

/// What one processing step received and released.
#[derive(Debug, Clone, PartialEq)]
pub enum AuditEntry {
    Inbound { index: u64, now: u64, kind: String },
    Tick { index: u64, now: u64 },
    Outbound { cause: String, t: u64, kind: String },
    StateChange { from: SessionState, to: SessionState },
}

#[derive(Debug, Clone)]
struct ActivePass {
    index: usize,
    phase: Phase,
    start_ms: u64,
    duration_ms: u64,
    tutor: Option<TutorSession>,
    events: Vec<PitchEvent>,
    slots: Vec<Slot>,
    cued: usize,
}

/// One session's recorded input: clock and raw inbound lines per pump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PumpRecord {
    v: u32,
    now: u64,
    #[serde(rename = "in")]
    inbound: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordingHeader {
    v: u32,
    id: u64,
    score: String,
    strategy: StrategyKind,
    config: String,
}

/// A practice session. Not shareable between concurrent pumps: callers own
/// it and feed it inbound records in arrival order.
#[derive(Debug, Clone)]
pub struct Session {
    desc: SessionDescriptor,
    score: Score,
    chart: FingeringChart,
    table: PhaseTable,
    detector: EventDetector,
    sounding: Option<Option<Pitch>>,
    device: DeviceSim,
    seen_transitions: usize,
    clutch_view: [Clutch; HOLES],
    pass: Option<ActivePass>,
    history: Vec<PassOutcome>,
    passes: usize,
    learning_ms: u64,
    clock: Option<u64>,
    inbound_count: u64,
    pump_count: u64,
    audit: Vec<AuditEntry>,
    recording: Vec<PumpRecord>,
}

/// The version is read first so a newer client gets a version complaint
/// rather than a parse error about fields it was never meant to send.
fn parse_inbound(line: &str) -> Result<Inbound, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("bad message: {e}"))?;
    match value.get("v").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => return Err(format!("unsupported schema version {v}")),
        None => return Err("bad message: missing schema version `v`".into()),
    }
    InboundMessage::deserialize(value)
        .map(|m| m.body)
        .map_err(|e| format!("bad message: {e}"))
}

/// Creates a session in the idle state at the first phase of its strategy.
pub fn create_session(
    library: &ScoreLibrary,
    id: u64,
    score_id: &str,
    strategy: StrategyKind,
    config: &EngineConfig,
) -> Result<Session, ServiceError> {
    let score = library
        .get(score_id)
        .ok_or_else(|| ServiceError::UnknownScore(score_id.to_string()))?
        .clone();
    let chart = library.chart().clone();
    let table = strategy.table();
    let engine = |e: &dyn fmt::Display| ServiceError::Engine(e.to_string());
    let detector = EventDetector::new(chart.clone(), config.sensing.threshold, config.sensing.debounce_ms)
        .map_err(|e| engine(&e))?;
    let device = DeviceSim::new(config.device).map_err(|e| engine(&e))?;
    Ok(Session {
        desc: SessionDescriptor {
            id,
            score_id: score_id.to_string(),
            strategy,
            config: *config,
            phase: table.first(),
            state: SessionState::Idle,
        },
        score,
        chart,
        table,
        detector,
        sounding: None,
        device,
        seen_transitions: 0,
        clutch_view: [Clutch::Detached; HOLES],
        pass: None,
        history: Vec::new(),
        passes: 0,
        learning_ms: 0,
        clock: None,
        inbound_count: 0,
        pump_count: 0,
        audit: Vec::new(),
        recording: Vec::new(),
    })
}

struct Emitter<'a> {
    cause: String,
    out: &'a mut Vec<OutboundMessage>,
}

impl Emitter<'_> {
    fn emit(&mut self, t: u64, body: Outbound) {
        self.out.push(OutboundMessage {
            v: SCHEMA_VERSION,
            t,
            cause: self.cause.clone(),
            body,
        });
    }
}

impl Session {
    pub fn descriptor(&self) -> &SessionDescriptor {
        &self.desc
    }

    pub fn state(&self) -> SessionState {
        self.desc.state
    }

    pub fn phase(&self) -> Phase {
        self.desc.phase
    }

    pub fn phases(&self) -> &[Phase] {
        self.table.phases()
    }

    pub fn history(&self) -> &[PassOutcome] {
        &self.history
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn clutches(&self) -> [Clutch; HOLES] {
        self.device.state().clutches()
    }

    /// Processes `inbound` in order at session time `now`, then runs the
    /// scheduled work due by `now`.
    pub fn pump(&mut self, inbound: &[Inbound], now: u64) -> Result<Vec<OutboundMessage>, ServiceError> {
        let lines: Vec<String> = inbound
            .iter()
            .map(|b| InboundMessage::new(b.clone()).to_line())
            .collect();
        let out = self.pump_lines(&lines, now)?;
        Ok(out)
    }

    /// Like [`Session::pump`] but takes raw channel lines; malformed or
    /// wrong-version lines are answered with a rejection.
    pub fn pump_lines(&mut self, lines: &[String], now: u64) -> Result<Vec<OutboundMessage>, ServiceError> {
        if let Some(last) = self.clock {
            if now < last {
                return Err(ServiceError::ClockRegression { now, last });
            }
        }
        self.clock = Some(now);
        self.recording.push(PumpRecord {
            v: SCHEMA_VERSION,
            now,
            inbound: lines.to_vec(),
        });
        let mut out = Vec::new();
        for line in lines {
            let index = self.inbound_count;
            self.inbound_count += 1;
            let parsed = parse_inbound(line);
            let kind = parsed.as_ref().map_or("invalid", |m| m.name());
            self.audit.push(AuditEntry::Inbound {
                index,
                now,
                kind: kind.to_string(),
            });
            let start = out.len();
            let mut em = Emitter {
                cause: format!("in:{index}"),
                out: &mut out,
            };
            match parsed {
                Ok(m) => self.step(now, Some(m), &mut em)?,
                Err(reason) => em.emit(now, Outbound::Rejected { reason }),
            }
            self.seal(&mut out[start..]);
        }
        let index = self.pump_count;
        self.pump_count += 1;
        self.audit.push(AuditEntry::Tick { index, now });
        let start = out.len();
        let mut em = Emitter {
            cause: format!("tick:{index}"),
            out: &mut out,
        };
        self.step(now, None, &mut em)?;
        self.seal(&mut out[start..]);
        Ok(out)
    }

    /// Orders one cause's records by session time, keeping emission order
    /// among equal times, and logs them.
    fn seal(&mut self, msgs: &mut [OutboundMessage]) {
        msgs.sort_by_key(|m| m.t);
        self.audit_out(msgs);
    }

    fn audit_out(&mut self, msgs: &[OutboundMessage]) {
        for m in msgs {
            let kind = serde_json::to_value(&m.body)
                .ok()
                .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_string))
                .unwrap_or_default();
            self.audit.push(AuditEntry::Outbound {
                cause: m.cause.clone(),
                t: m.t,
                kind,
            });
        }
    }

    fn step(&mut self, now: u64, body: Option<Inbound>, em: &mut Emitter) -> Result<(), ServiceError> {
        self.roll_passes(now, em)?;
        if let Some(body) = body {
            self.handle(now, body, em)?;
        }
        self.tick_pass(now, &[], em)?;
        self.sync_device(now, em)
    }

    fn reject(&self, now: u64, body: &Inbound, em: &mut Emitter) {
        em.emit(
            now,
            Outbound::Rejected {
                reason: format!("'{}' not allowed while {}", body.name(), self.desc.state),
            },
        );
    }

    fn handle(&mut self, now: u64, body: Inbound, em: &mut Emitter) -> Result<(), ServiceError> {
        let state = self.desc.state;
        let live = matches!(state, SessionState::Running | SessionState::Exam);
        match body {
            Inbound::Hello => {
                em.emit(now, self.snapshot());
                em.emit(
                    now,
                    Outbound::ClutchState {
                        clutches: self.clutch_view,
                    },
                );
            }
            _ if state == SessionState::Done => self.reject(now, &body, em),
            Inbound::Frame { values } => match SensorFrame::new(now, values) {
                Ok(frame) => {
                    let events = self
                        .detector
                        .push(&frame)
                        .map_err(|e| ServiceError::Engine(e.to_string()))?;
                    if let Some(e) = events.last() {
                        self.sounding = Some(e.pitch);
                    }
                    self.tick_pass(now, &events, em)?;
                }
                Err(e) => em.emit(
                    now,
                    Outbound::Rejected {
                        reason: format!("bad frame: {e}"),
                    },
                ),
            },
            Inbound::Start if state == SessionState::Idle => {
                self.begin_pass(now, self.desc.phase, em)?;
            }
            Inbound::Stop if live => {
                self.abort_pass(now)?;
                self.set_state(SessionState::Done, now, em);
            }
            Inbound::PhaseOverride { phase } if live && self.table.contains(phase) => {
                self.restart(now, phase, "override", em)?;
            }
            Inbound::PhaseOverride { phase } if live => em.emit(
                now,
                Outbound::Rejected {
                    reason: format!("phase {phase} is not part of the {} strategy", self.desc.strategy),
                },
            ),
            Inbound::ExamRequest if live => self.restart(now, Phase::Test, "exam_request", em)?,
            other => self.reject(now, &other, em),
        }
        Ok(())
    }

    fn snapshot(&self) -> Outbound {
        Outbound::Session {
            id: self.desc.id,
            score: self.desc.score_id.clone(),
            strategy: self.desc.strategy,
            phases: self.table.phases().to_vec(),
            phase: self.desc.phase,
            state: self.desc.state,
            pass: self.pass.as_ref().map_or(self.passes, |p| p.index),
        }
    }

    fn set_state(&mut self, to: SessionState, t: u64, em: &mut Emitter) {
        let from = self.desc.state;
        if from == to {
            return;
        }
        self.audit.push(AuditEntry::StateChange { from, to });
        self.desc.state = to;
        em.emit(t, Outbound::State { state: to });
    }

    fn change_phase(&mut self, to: Phase, t: u64, reason: &str, em: &mut Emitter) {
        let from = self.desc.phase;
        self.desc.phase = to;
        if from != to {
            em.emit(
                t,
                Outbound::PhaseChange {
                    from,
                    to,
                    reason: reason.to_string(),
                },
            );
        }
    }

    fn restart(&mut self, now: u64, phase: Phase, reason: &str, em: &mut Emitter) -> Result<(), ServiceError> {
        self.abort_pass(now)?;
        self.change_phase(phase, now, reason, em);
        self.begin_pass(now, phase, em)
    }

    fn begin_pass(&mut self, start_ms: u64, phase: Phase, em: &mut Emitter) -> Result<(), ServiceError> {
        let cfg = &self.desc.config;
        let tutor = match phase.mode() {
            Some(mode) => Some(
                TutorSession::new(&self.score, &self.chart, mode, cfg.tutor)
                    .map_err(|e| ServiceError::Engine(e.to_string()))?,
            ),
            None => None,
        };
        self.pass = Some(ActivePass {
            index: self.passes + 1,
            phase,
            start_ms,
            duration_ms: pass_duration_ms(&self.score, &cfg.tutor),
            tutor,
            events: Vec::new(),
            slots: schedule(&self.score, &cfg.tutor),
            cued: 0,
        });
        let state = if phase == Phase::Test {
            SessionState::Exam
        } else {
            SessionState::Running
        };
        self.set_state(state, start_ms, em);
        // the learner's current fingering carries into the new pass; in an
        // exam it only counts when it already is the first note
        let first = self.score.notes().first().map(|n| n.pitch);
        let carried: Vec<PitchEvent> = self
            .sounding
            .filter(|p| phase != Phase::Test || *p == first)
            .map(|p| PitchEvent::new(start_ms, p))
            .into_iter()
            .collect();
        self.tick_pass(start_ms, &carried, em)
    }

    fn abort_pass(&mut self, now: u64) -> Result<(), ServiceError> {
        if self.pass.take().is_some() {
            for f in 0..HOLES {
                self.device
                    .apply(&ActuatorCommand::detach(f), now)
                    .map_err(|e| ServiceError::Engine(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Feeds absolute-time events to the active pass and advances it to
    /// `now`.
    fn tick_pass(&mut self, now: u64, events: &[PitchEvent], em: &mut Emitter) -> Result<(), ServiceError> {
        let Some(pass) = self.pass.as_mut() else {
            return Ok(());
        };
        let start = pass.start_ms;
        let rel_now = (now - start).min(pass.duration_ms);
        let rel: Vec<PitchEvent> = events
            .iter()
            .map(|e| PitchEvent::new(e.t_ms.saturating_sub(start).min(rel_now), e.pitch))
            .collect();
        let Some(tutor) = pass.tutor.as_mut() else {
            pass.events.extend(rel);
            self.exam_cues(rel_now, em);
            return Ok(());
        };
        let out = tutor
            .tick(rel_now, &rel)
            .map_err(|e| ServiceError::Engine(e.to_string()))?;
        let idx = pass.index;
        self.emit_tutor(start, idx, out, em)
    }

    /// Onset cues keep the tempo during exams too; nothing else is guided.
    fn exam_cues(&mut self, rel_now: u64, em: &mut Emitter) {
        let Some(pass) = self.pass.as_mut() else {
            return;
        };
        while let Some(s) = pass.slots.get(pass.cued).filter(|s| s.onset_ms <= rel_now) {
            em.emit(
                pass.start_ms + s.onset_ms,
                Outbound::OnsetCue {
                    pass: pass.index,
                    note: s.index,
                    pitch: s.note.pitch,
                },
            );
            pass.cued += 1;
        }
    }

    fn emit_tutor(&mut self, start: u64, idx: usize, out: TickOutput, em: &mut Emitter) -> Result<(), ServiceError> {
        for c in &out.cues {
            em.emit(
                start + c.t_ms,
                Outbound::OnsetCue {
                    pass: idx,
                    note: c.note_index,
                    pitch: c.pitch,
                },
            );
        }
        let mut i = 0;
        while i < out.commands.len() {
            let head = out.commands[i];
            let mut j = i;
            let mut fingers = Vec::new();
            let mut targets = Vec::new();
            while j < out.commands.len()
                && out.commands[j].t_ms == head.t_ms
                && out.commands[j].cmd.pulse_ms == head.cmd.pulse_ms
            {
                let c = out.commands[j];
                self.device
                    .apply(&c.cmd, start + c.t_ms)
                    .map_err(|e| ServiceError::Engine(e.to_string()))?;
                fingers.push(c.cmd.finger);
                targets.push(c.cmd.target);
                j += 1;
            }
            em.emit(
                start + head.t_ms,
                Outbound::HintCue {
                    pass: idx,
                    fingers,
                    targets,
                    pulse_ms: head.cmd.pulse_ms,
                },
            );
            i = j;
        }
        for m in &out.mistakes {
            em.emit(
                start + m.detected_at_ms,
                Outbound::Mistake {
                    pass: idx,
                    note: m.note_index,
                    score_time_ms: m.score_time_ms,
                },
            );
        }
        Ok(())
    }

    /// Emits one clutch snapshot per instant at which the device's clutches
    /// changed.
    fn sync_device(&mut self, now: u64, em: &mut Emitter) -> Result<(), ServiceError> {
        self.device
            .advance_to(now)
            .map_err(|e| ServiceError::Engine(e.to_string()))?;
        let fresh = &self.device.transitions()[self.seen_transitions..];
        let mut view = self.clutch_view;
        let mut snapshots = Vec::new();
        let mut k = 0;
        while k < fresh.len() {
            let t = fresh[k].t_ms;
            while k < fresh.len() && fresh[k].t_ms == t {
                view[fresh[k].finger] = fresh[k].clutch;
                k += 1;
            }
            if snapshots.last().map_or(self.clutch_view, |(_, v)| *v) != view {
                snapshots.push((t, view));
            }
        }
        self.seen_transitions = self.device.transitions().len();
        self.clutch_view = view;
        for (t, clutches) in snapshots {
            em.emit(t, Outbound::ClutchState { clutches });
        }
        Ok(())
    }

    /// Closes every pass whose end is at or before `now`, each exactly at its
    /// scheduled end, and starts the next one there.
    fn roll_passes(&mut self, now: u64, em: &mut Emitter) -> Result<(), ServiceError> {
        loop {
            let Some(pass) = self.pass.as_ref() else {
                return Ok(());
            };
            let end = pass.start_ms + pass.duration_ms;
            if end > now {
                return Ok(());
            }
            self.tick_pass(end, &[], em)?;
            self.sync_device(end, em)?;
            let pass = self.pass.take().expect("checked above");
            self.finish_pass(pass, end, em)?;
        }
    }

    fn finish_pass(&mut self, pass: ActivePass, end: u64, em: &mut Emitter) -> Result<(), ServiceError> {
        let notes = self.score.len();
        let (mistakes, exam) = match &pass.tutor {
            Some(t) => (t.mistake_count(), None),
            None => {
                let r = grade_exam(&self.score, &pass.events, self.desc.config.exam_strictness);
                (r.forgotten_notes, Some(r))
            }
        };
        let outcome = PassOutcome {
            phase: pass.phase,
            mistake_count: mistakes,
            note_count: notes,
            duration_ms: pass.duration_ms,
            exam_passed: exam.as_ref().map(|e| e.pass),
        };
        self.passes = pass.index;
        self.learning_ms += pass.duration_ms;
        let passed = pass.phase == Phase::Test && exam.as_ref().is_some_and(|e| e.pass);
        let next = (!passed).then(|| {
            self.table
                .next_phase(pass.phase, &outcome, &self.history, &self.desc.config.strategy)
        });
        self.history.push(outcome);
        let rate = passed.then(|| learning_rate(1.0, self.learning_ms as f64 / 60_000.0).ok()).flatten();
        em.emit(
            end,
            Outbound::Metrics(Metrics {
                pass: pass.index,
                phase: pass.phase,
                mistakes,
                notes,
                duration_ms: pass.duration_ms,
                exam_pass: exam.as_ref().map(|e| e.pass),
                forgotten: exam.as_ref().map(|e| e.forgotten_notes),
                next_phase: next,
                learning_ms: self.learning_ms,
                done: passed,
                learning_rate: rate,
            }),
        );
        match next {
            None => self.set_state(SessionState::Done, end, em),
            Some(phase) => {
                self.change_phase(phase, end, "strategy", em);
                self.begin_pass(end, phase, em)?;
            }
        }
        Ok(())
    }

    /// Recorded input of this session, replayable with [`replay`].
    pub fn recording_text(&self) -> String {
        let header = RecordingHeader {
            v: SCHEMA_VERSION,
            id: self.desc.id,
            score: self.desc.score_id.clone(),
            strategy: self.desc.strategy,
            config: self.desc.config.to_toml(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.recording {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Re-runs a recorded session headlessly and returns its outbound lines.
pub fn replay(recording: &str, library: &ScoreLibrary) -> Result<Vec<String>, ServiceError> {
    let mut lines = recording.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, message: String| ServiceError::Recording { line: line + 1, message };
    let (n, first) = lines.next().ok_or_else(|| bad(0, "empty recording".into()))?;
    let header: RecordingHeader = serde_json::from_str(first).map_err(|e| bad(n, e.to_string()))?;
    if header.v != SCHEMA_VERSION {
        return Err(bad(n, format!("unsupported schema version {}", header.v)));
    }
    let config = EngineConfig::from_toml(&header.config).map_err(|e| bad(n, e.to_string()))?;
    let mut session = create_session(library, header.id, &header.score, header.strategy, &config)?;
    let mut out = Vec::new();
    for (n, line) in lines {
        let rec: PumpRecord = serde_json::from_str(line).map_err(|e| bad(n, e.to_string()))?;
        for m in session.pump_lines(&rec.inbound, rec.now)? {
            out.push(m.to_line());
        }
    }
    Ok(out)
}

/// Sessions by id, each pumped independently.
#[derive(Debug)]
pub struct Service {
    library: ScoreLibrary,
    config: EngineConfig,
    sessions: BTreeMap<u64, Session>,
    next_id: u64,
}

impl Service {
    pub fn new(library: ScoreLibrary, config: EngineConfig) -> Self {
        Self {
            library,
            config,
            sessions: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn library(&self) -> &ScoreLibrary {
        &self.library
    }

    pub fn create(&mut self, score_id: &str, strategy: StrategyKind) -> Result<SessionDescriptor, ServiceError> {
        let id = self.next_id;
        let s = create_session(&self.library, id, score_id, strategy, &self.config)?;
        self.next_id += 1;
        let desc = s.descriptor().clone();
        self.sessions.insert(id, s);
        Ok(desc)
    }

    pub fn session(&self, id: u64) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn pump_lines(&mut self, id: u64, lines: &[String], now: u64) -> Result<Vec<OutboundMessage>, ServiceError> {
        self.sessions
            .get_mut(&id)
            .ok_or(ServiceError::UnknownSession(id))?
            .pump_lines(lines, now)
    }

    pub fn remove(&mut self, id: u64) -> Option<Session> {
        self.sessions.remove(&id)
    }
}
