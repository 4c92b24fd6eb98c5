//! The real-time tutoring loop: constant-tempo scheduling, the three guidance
//! modes and windowed mistake detection.
//!
//! A note with scheduled onset `t` counts as played if the learner's pitch is
//! correct at some instant of the closed window `[t, t + delta_t]`: either
//! the pitch sounding when the window opens (the last event strictly before
//! `t`) or any event stamped inside the window. Within one millisecond the
//! session processes note ends, then onsets, then learner events, then
//! window closes, so an event stamped exactly at `t + delta_t` still counts.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{ActuatorCommand, Clutch};
use crate::score::{FingerPattern, FingeringChart, Note, Pitch, Score, ScoreError, HOLES};
use crate::sensing::PitchEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TutorError {
    #[error("tick at {now} ms is earlier than the previous tick at {last} ms")]
    TimeRegression { now: u64, last: u64 },
    #[error("event at {t_ms} ms is newer than the tick time {now} ms")]
    EventInFuture { t_ms: u64, now: u64 },
    #[error("event at {t_ms} ms is older than an already received event at {last} ms")]
    EventOutOfOrder { t_ms: u64, last: u64 },
    #[error("invalid tutor config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mandatory,
    Hinted,
    Adaptive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Mandatory => "mandatory",
            Mode::Hinted => "hinted",
            Mode::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mandatory" => Ok(Mode::Mandatory),
            "hinted" => Ok(Mode::Hinted),
            "adaptive" => Ok(Mode::Adaptive),
            other => Err(format!("unknown mode '{other}' (mandatory|hinted|adaptive)")),
        }
    }
}

/// Which fingers receive a hint pulse at an onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HintScope {
    /// Only fingers whose hole state differs from the previous note.
    #[default]
    Changed,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TutorConfig {
    pub delta_t_ms: u64,
    pub hint_pulse_ms: u64,
    /// Playback speed relative to the score; 0.5 plays at half speed.
    pub tempo_scale: f64,
    pub hint_scope: HintScope,
}

impl Default for TutorConfig {
    fn default() -> Self {
        Self {
            delta_t_ms: 200,
            hint_pulse_ms: 60,
            tempo_scale: 1.0,
            hint_scope: HintScope::Changed,
        }
    }
}

impl TutorConfig {
    pub fn validate(&self) -> Result<(), TutorError> {
        if self.delta_t_ms == 0 {
            return Err(TutorError::InvalidConfig("delta_t_ms must be at least 1".into()));
        }
        if self.hint_pulse_ms == 0 {
            return Err(TutorError::InvalidConfig("hint_pulse_ms must be at least 1".into()));
        }
        if !(self.tempo_scale.is_finite() && self.tempo_scale > 0.0) {
            return Err(TutorError::InvalidConfig(format!(
                "tempo_scale {} must be positive",
                self.tempo_scale
            )));
        }
        Ok(())
    }
}

/// One note placed on the playback timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub index: usize,
    pub onset_ms: u64,
    pub end_ms: u64,
    pub note: Note,
}

/// Places the score on the playback timeline, dividing every time by
/// `tempo_scale`. Rounding never lets a note start before its predecessor
/// ends or shrink below 1 ms.
pub fn schedule(score: &Score, cfg: &TutorConfig) -> Vec<Slot> {
    let scale = |ms: u64| (ms as f64 / cfg.tempo_scale).round() as u64;
    let mut prev_end = 0;
    score
        .notes()
        .iter()
        .enumerate()
        .map(|(index, note)| {
            let onset_ms = scale(note.onset_ms).max(if index == 0 { 0 } else { prev_end });
            let end_ms = scale(note.end_ms()).max(onset_ms + 1);
            prev_end = end_ms;
            Slot {
                index,
                onset_ms,
                end_ms,
                note: *note,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedCommand {
    pub t_ms: u64,
    pub cmd: ActuatorCommand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MistakeReport {
    pub note_index: usize,
    pub score_time_ms: u64,
    pub detected_at_ms: u64,
}

/// Abstract note-on for the playback channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioCue {
    pub t_ms: u64,
    pub note_index: usize,
    pub pitch: Pitch,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutput {
    pub commands: Vec<TimedCommand>,
    pub mistakes: Vec<MistakeReport>,
    pub cues: Vec<AudioCue>,
}

impl TickOutput {
    pub fn is_empty(&self) -> bool {
        self.commands.is_empty() && self.mistakes.is_empty() && self.cues.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogEntry {
    Cue(AudioCue),
    Command(TimedCommand),
    Mistake(MistakeReport),
}

impl LogEntry {
    pub fn t_ms(&self) -> u64 {
        match self {
            LogEntry::Cue(c) => c.t_ms,
            LogEntry::Command(c) => c.t_ms,
            LogEntry::Mistake(m) => m.detected_at_ms,
        }
    }

    /// One line of the log export; field order is fixed.
    pub fn to_line(&self) -> String {
        match self {
            LogEntry::Cue(c) => format!("{} cue note={} pitch={}", c.t_ms, c.note_index, c.pitch),
            LogEntry::Command(c) => {
                let pulse = c.cmd.pulse_ms.map_or("-".to_string(), |p| p.to_string());
                format!(
                    "{} cmd finger={} target={} pulse={}",
                    c.t_ms, c.cmd.finger, c.cmd.target, pulse
                )
            }
            LogEntry::Mistake(m) => format!(
                "{} mistake note={} score_time={}",
                m.detected_at_ms, m.note_index, m.score_time_ms
            ),
        }
    }
}

pub fn log_to_text(log: &[LogEntry]) -> String {
    let mut out = String::new();
    for e in log {
        let _ = writeln!(out, "{}", e.to_line());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteStatus {
    Pending,
    Satisfied,
    Missed,
}

// Same-millisecond processing order: ends, onsets, (events), closes.
const RANK_END: u8 = 0;
const RANK_ONSET: u8 = 1;
const RANK_CLOSE: u8 = 3;

/// One tutoring pass over a score in a fixed mode.
#[derive(Debug, Clone)]
pub struct TutorSession {
    mode: Mode,
    config: TutorConfig,
    slots: Vec<Slot>,
    patterns: Vec<FingerPattern>,
    queue: BTreeSet<(u64, u8, usize)>,
    now_ms: Option<u64>,
    last_event_ms: Option<u64>,
    sounding: Option<Pitch>,
    status: Vec<NoteStatus>,
    open: Vec<usize>,
    hold: Option<usize>,
    log: Vec<LogEntry>,
    completion_ms: u64,
}

impl TutorSession {
    pub fn new(score: &Score, chart: &FingeringChart, mode: Mode, config: TutorConfig) -> Result<Self, TutorError> {
        config.validate()?;
        let slots = schedule(score, &config);
        let patterns = slots
            .iter()
            .map(|s| chart.pattern_for_pitch(s.note.pitch))
            .collect::<Result<Vec<_>, _>>()?;
        let mut queue = BTreeSet::new();
        for s in &slots {
            queue.insert((s.onset_ms, RANK_ONSET, s.index));
            queue.insert((s.onset_ms + config.delta_t_ms, RANK_CLOSE, s.index));
            queue.insert((s.end_ms, RANK_END, s.index));
        }
        let completion_ms = queue.last().map_or(0, |(t, _, _)| *t);
        Ok(Self {
            mode,
            config,
            completion_ms,
            status: vec![NoteStatus::Pending; slots.len()],
            slots,
            patterns,
            queue,
            now_ms: None,
            last_event_ms: None,
            sounding: None,
            open: Vec::new(),
            hold: None,
            log: Vec::new(),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &TutorConfig {
        &self.config
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn patterns(&self) -> &[FingerPattern] {
        &self.patterns
    }

    pub fn now_ms(&self) -> Option<u64> {
        self.now_ms
    }

    pub fn status(&self) -> &[NoteStatus] {
        &self.status
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn mistake_count(&self) -> usize {
        self.status.iter().filter(|s| **s == NoteStatus::Missed).count()
    }

    /// Time after which nothing more is scheduled: the later of the last
    /// note end and the last window close.
    pub fn completion_ms(&self) -> u64 {
        self.completion_ms
    }

    pub fn is_finished(&self) -> bool {
        self.queue.is_empty()
    }

    /// Advances the session to `now_ms`, consuming learner events stamped at
    /// or before `now_ms`.
    pub fn tick(&mut self, now_ms: u64, events: &[PitchEvent]) -> Result<TickOutput, TutorError> {
        if let Some(last) = self.now_ms {
            if now_ms < last {
                return Err(TutorError::TimeRegression { now: now_ms, last });
            }
        }
        let mut prev = self.last_event_ms;
        for e in events {
            if e.t_ms > now_ms {
                return Err(TutorError::EventInFuture { t_ms: e.t_ms, now: now_ms });
            }
            if let Some(last) = prev {
                if e.t_ms < last {
                    return Err(TutorError::EventOutOfOrder { t_ms: e.t_ms, last });
                }
            }
            prev = Some(e.t_ms);
        }

        let mut out = TickOutput::default();
        let mut pending = events.iter().peekable();
        loop {
            let next_action = self.queue.first().copied().filter(|(t, _, _)| *t <= now_ms);
            let next_event = pending.peek().map(|e| e.t_ms);
            let take_event = match (next_action, next_event) {
                (None, None) => break,
                (None, Some(_)) => true,
                (Some(_), None) => false,
                (Some((t, rank, _)), Some(te)) => te < t || (te == t && rank == RANK_CLOSE),
            };
            if take_event {
                let e = *pending.next().expect("peeked");
                self.on_event(e, &mut out);
            } else {
                let (t, rank, idx) = self.queue.pop_first().expect("peeked");
                match rank {
                    RANK_END => self.on_end(t, idx, &mut out),
                    RANK_ONSET => self.on_onset(t, idx, &mut out),
                    _ => self.on_close(t, idx, &mut out),
                }
            }
        }
        self.now_ms = Some(now_ms);
        if let Some(t) = prev {
            self.last_event_ms = Some(t);
        }
        Ok(out)
    }

    /// Drives the session with a clock that starts at 0 and advances by
    /// `tick_ms`, delivering each event on the first tick at or after its
    /// timestamp. Events after the completion time are ignored.
    pub fn run_to_completion(&mut self, trace: &[PitchEvent], tick_ms: u64) -> Result<&[LogEntry], TutorError> {
        let tick_ms = tick_ms.max(1);
        let end = self.completion_ms();
        let mut now = self.now_ms.unwrap_or(0);
        let mut next = 0;
        loop {
            let start = next;
            while next < trace.len() && trace[next].t_ms <= now {
                next += 1;
            }
            self.tick(now, &trace[start..next])?;
            if now >= end {
                break;
            }
            now = (now + tick_ms).min(end);
        }
        Ok(&self.log)
    }

    fn emit_cmd(&mut self, t_ms: u64, cmd: ActuatorCommand, out: &mut TickOutput) {
        let c = TimedCommand { t_ms, cmd };
        out.commands.push(c);
        self.log.push(LogEntry::Command(c));
    }

    fn hold_pattern(&mut self, t_ms: u64, pattern: FingerPattern, out: &mut TickOutput) {
        for f in 0..HOLES {
            self.emit_cmd(t_ms, ActuatorCommand::hold(f, Clutch::for_hole(&pattern, f)), out);
        }
    }

    fn release_all(&mut self, t_ms: u64, out: &mut TickOutput) {
        for f in 0..HOLES {
            self.emit_cmd(t_ms, ActuatorCommand::detach(f), out);
        }
    }

    fn on_onset(&mut self, t: u64, idx: usize, out: &mut TickOutput) {
        let pitch = self.slots[idx].note.pitch;
        if self.sounding == Some(pitch) {
            self.status[idx] = NoteStatus::Satisfied;
        }
        self.open.push(idx);

        let cue = AudioCue {
            t_ms: t,
            note_index: idx,
            pitch,
        };
        out.cues.push(cue);
        self.log.push(LogEntry::Cue(cue));

        let pattern = self.patterns[idx];
        match self.mode {
            Mode::Mandatory => self.hold_pattern(t, pattern, out),
            Mode::Hinted => {
                let fingers: Vec<usize> = match (self.config.hint_scope, idx) {
                    (HintScope::Changed, i) if i > 0 => pattern.changed_fingers(&self.patterns[i - 1]),
                    _ => (0..HOLES).collect(),
                };
                let pulse = self.config.hint_pulse_ms;
                for f in fingers {
                    self.emit_cmd(t, ActuatorCommand::pulse(f, Clutch::for_hole(&pattern, f), pulse), out);
                }
            }
            Mode::Adaptive => {}
        }
    }

    fn on_event(&mut self, e: PitchEvent, out: &mut TickOutput) {
        self.sounding = e.pitch;
        let Some(p) = e.pitch else {
            return;
        };
        for &j in &self.open {
            let slot = &self.slots[j];
            if self.status[j] == NoteStatus::Pending
                && slot.note.pitch == p
                && e.t_ms >= slot.onset_ms
                && e.t_ms <= slot.onset_ms + self.config.delta_t_ms
            {
                self.status[j] = NoteStatus::Satisfied;
            }
        }
        if let Some(k) = self.hold {
            if self.slots[k].note.pitch == p {
                self.hold = None;
                // a late event can be stamped before the current clock
                let t = e.t_ms.max(self.now_ms.unwrap_or(0));
                self.release_all(t, out);
            }
        }
    }

    fn on_close(&mut self, t: u64, idx: usize, out: &mut TickOutput) {
        self.open.retain(|&j| j != idx);
        if self.status[idx] != NoteStatus::Pending {
            return;
        }
        self.status[idx] = NoteStatus::Missed;
        if self.mode != Mode::Adaptive {
            return;
        }
        let report = MistakeReport {
            note_index: idx,
            score_time_ms: self.slots[idx].onset_ms,
            detected_at_ms: t,
        };
        out.mistakes.push(report);
        self.log.push(LogEntry::Mistake(report));
        if self.slots[idx].end_ms > t {
            self.hold = Some(idx);
            let pattern = self.patterns[idx];
            self.hold_pattern(t, pattern, out);
        }
    }

    fn on_end(&mut self, t: u64, idx: usize, out: &mut TickOutput) {
        match self.mode {
            Mode::Adaptive if self.hold == Some(idx) => {
                self.hold = None;
                self.release_all(t, out);
            }
            Mode::Mandatory if idx + 1 == self.slots.len() => self.release_all(t, out),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::FingeringChart;

    fn chart() -> FingeringChart {
        FingeringChart::default_chart()
    }

    fn score(notes: &[(u16, u64, u64)]) -> Score {
        Score::new(
            notes
                .iter()
                .map(|&(p, onset_ms, duration_ms)| Note {
                    pitch: Pitch(p),
                    onset_ms,
                    duration_ms,
                })
                .collect(),
            120.0,
        )
        .unwrap()
    }

    fn session(s: &Score, mode: Mode) -> TutorSession {
        TutorSession::new(s, &chart(), mode, TutorConfig::default()).unwrap()
    }

    #[test]
    fn schedule_scaling() {
        let s = score(&[(0, 0, 500), (1, 500, 250), (2, 1000, 100)]);
        let cfg = TutorConfig::default();
        let onsets: Vec<u64> = schedule(&s, &cfg).iter().map(|x| x.onset_ms).collect();
        assert_eq!(onsets, vec![0, 500, 1000]);
        let half = TutorConfig {
            tempo_scale: 0.5,
            ..cfg
        };
        let slots = schedule(&s, &half);
        assert_eq!(slots.iter().map(|x| x.onset_ms).collect::<Vec<_>>(), vec![0, 1000, 2000]);
        assert_eq!(slots[1].end_ms, 1500);
        assert!(schedule(&Score::new(vec![], 60.0).unwrap(), &cfg).is_empty());
    }

    #[test]
    fn schedule_never_collapses_onsets() {
        let s = score(&[(0, 0, 1), (1, 1, 1), (2, 2, 1)]);
        let fast = TutorConfig {
            tempo_scale: 8.0,
            ..TutorConfig::default()
        };
        let slots = schedule(&s, &fast);
        for w in slots.windows(2) {
            assert!(w[1].onset_ms > w[0].onset_ms);
            assert!(w[1].onset_ms >= w[0].end_ms);
        }
    }

    #[test]
    fn adaptive_event_inside_window() {
        let s = score(&[(3, 1000, 500)]);
        let mut t = session(&s, Mode::Adaptive);
        t.tick(1100, &[]).unwrap();
        let out = t.tick(1150, &[PitchEvent::new(1150, Some(Pitch(3)))]).unwrap();
        assert!(out.mistakes.is_empty());
        let out = t.tick(2000, &[]).unwrap();
        assert!(out.mistakes.is_empty() && out.commands.is_empty());
        assert_eq!(t.status(), &[NoteStatus::Satisfied]);
    }

    #[test]
    fn adaptive_event_after_window() {
        let s = score(&[(3, 1000, 500)]);
        let mut t = session(&s, Mode::Adaptive);
        t.tick(1100, &[]).unwrap();
        let out = t.tick(1201, &[PitchEvent::new(1201, Some(Pitch(3)))]).unwrap();
        assert_eq!(
            out.mistakes,
            vec![MistakeReport {
                note_index: 0,
                score_time_ms: 1000,
                detected_at_ms: 1200
            }]
        );
        // corrective hold at 1200, released by the correct event at 1201
        let pattern = chart().pattern_for_pitch(Pitch(3)).unwrap();
        let holds: Vec<_> = out.commands.iter().filter(|c| c.t_ms == 1200).collect();
        assert_eq!(holds.len(), 6);
        for c in holds {
            assert_eq!(c.cmd.target, Clutch::for_hole(&pattern, c.cmd.finger));
            assert_eq!(c.cmd.pulse_ms, None);
        }
        let releases: Vec<_> = out.commands.iter().filter(|c| c.t_ms == 1201).collect();
        assert_eq!(releases.len(), 6);
        assert!(releases.iter().all(|c| c.cmd.target == Clutch::Detached));
    }

    #[test]
    fn window_is_closed_at_both_ends() {
        let s = score(&[(3, 1000, 500)]);
        for (ts, ok) in [(999, false), (1000, true), (1200, true), (1201, false)] {
            // the event at 999 is superseded by a wrong pitch before the onset
            let mut events = vec![PitchEvent::new(ts, Some(Pitch(3)))];
            if ts < 1000 {
                events.push(PitchEvent::new(999, Some(Pitch(4))));
            }
            let mut t = session(&s, Mode::Adaptive);
            t.run_to_completion(&events, 1).unwrap();
            assert_eq!(t.status()[0] == NoteStatus::Satisfied, ok, "event at {ts}");
        }
    }

    #[test]
    fn sounding_pitch_carries_into_window() {
        // repeated note: the fingering never changes, so no new event
        let s = score(&[(3, 0, 500), (3, 500, 500)]);
        let mut t = session(&s, Mode::Adaptive);
        t.run_to_completion(&[PitchEvent::new(10, Some(Pitch(3)))], 1).unwrap();
        assert_eq!(t.mistake_count(), 0);
    }

    #[test]
    fn hinted_identical_patterns_get_no_pulse() {
        let s = score(&[(2, 0, 300), (2, 300, 300), (5, 600, 300)]);
        let mut t = session(&s, Mode::Hinted);
        t.run_to_completion(&[], 1).unwrap();
        let at = |ms: u64| {
            t.log()
                .iter()
                .filter(|e| matches!(e, LogEntry::Command(c) if c.t_ms == ms))
                .count()
        };
        assert_eq!(at(0), 6);
        assert_eq!(at(300), 0);
        // XXXXOX -> XXXOOO: holes 3 and 4 change
        assert_eq!(at(600), 2);
        for e in t.log() {
            if let LogEntry::Command(c) = e {
                assert_eq!(c.cmd.pulse_ms, Some(60));
            }
        }
    }

    #[test]
    fn hinted_full_scope_pulses_every_finger() {
        let s = score(&[(2, 0, 300), (2, 300, 300)]);
        let cfg = TutorConfig {
            hint_scope: HintScope::Full,
            ..TutorConfig::default()
        };
        let mut t = TutorSession::new(&s, &chart(), Mode::Hinted, cfg).unwrap();
        t.run_to_completion(&[], 1).unwrap();
        let cmds = t.log().iter().filter(|e| matches!(e, LogEntry::Command(_))).count();
        assert_eq!(cmds, 12);
    }

    #[test]
    fn empty_trace_adaptive_reports_every_note() {
        let s = score(&[(0, 0, 400), (4, 400, 400), (7, 900, 100)]);
        let mut t = session(&s, Mode::Adaptive);
        let log = t.run_to_completion(&[], 7).unwrap();
        let mistakes: Vec<_> = log.iter().filter(|e| matches!(e, LogEntry::Mistake(_))).collect();
        assert_eq!(mistakes.len(), 3);
        // the last note ends before its window closes: report only, no hold
        assert!(!log.iter().any(|e| matches!(e, LogEntry::Command(c) if c.t_ms >= 1100)));
    }

    #[test]
    fn perfect_trace_adaptive_is_silent() {
        let s = score(&[(0, 0, 400), (4, 400, 400), (7, 900, 100)]);
        let trace: Vec<_> = s
            .notes()
            .iter()
            .map(|n| PitchEvent::new(n.onset_ms, Some(n.pitch)))
            .collect();
        let mut t = session(&s, Mode::Adaptive);
        let log = t.run_to_completion(&trace, 1).unwrap();
        assert!(log.iter().all(|e| matches!(e, LogEntry::Cue(_))));
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn mandatory_ignores_learner() {
        let s = score(&[(0, 0, 400), (4, 400, 400), (7, 900, 100)]);
        let mut a = session(&s, Mode::Mandatory);
        a.run_to_completion(&[], 1).unwrap();
        let mut b = session(&s, Mode::Mandatory);
        b.run_to_completion(&[PitchEvent::new(5, Some(Pitch(9))), PitchEvent::new(950, None)], 3)
            .unwrap();
        assert_eq!(log_to_text(a.log()), log_to_text(b.log()));
        let cmds = a.log().iter().filter(|e| matches!(e, LogEntry::Command(_))).count();
        assert_eq!(cmds, 3 * 6 + 6);
    }

    #[test]
    fn tick_errors() {
        let s = score(&[(0, 0, 400)]);
        let mut t = session(&s, Mode::Adaptive);
        t.tick(100, &[]).unwrap();
        assert_eq!(t.tick(50, &[]), Err(TutorError::TimeRegression { now: 50, last: 100 }));
        assert_eq!(
            t.tick(120, &[PitchEvent::new(121, None)]),
            Err(TutorError::EventInFuture { t_ms: 121, now: 120 })
        );
        t.tick(130, &[PitchEvent::new(125, None)]).unwrap();
        assert_eq!(
            t.tick(140, &[PitchEvent::new(124, None)]),
            Err(TutorError::EventOutOfOrder { t_ms: 124, last: 125 })
        );
        let bad = TutorConfig {
            delta_t_ms: 0,
            ..TutorConfig::default()
        };
        assert!(TutorSession::new(&s, &chart(), Mode::Hinted, bad).is_err());
    }

    #[test]
    fn log_line_format() {
        let s = score(&[(3, 1000, 500)]);
        let mut t = session(&s, Mode::Adaptive);
        t.run_to_completion(&[], 1).unwrap();
        let text = log_to_text(t.log());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "1000 cue note=0 pitch=3");
        assert_eq!(lines[1], "1200 mistake note=0 score_time=1000");
        assert_eq!(lines[2], "1200 cmd finger=0 target=down pulse=-");
        assert_eq!(lines.last().unwrap(), &"1500 cmd finger=5 target=detached pulse=-");
    }
}
