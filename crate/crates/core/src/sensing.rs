//! Capacitive hole sensing: raw frames to debounced, change-compressed pitch
//! events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{FingerPattern, FingeringChart, Hole, Pitch, Score, ScoreError, HOLES};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DEBOUNCE_MS: u64 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensingError {
    #[error("frame at {t_ms} ms arrived after a frame at {last_ms} ms")]
    OutOfOrder { t_ms: u64, last_ms: u64 },
    #[error("sensor value {value} on hole {hole} outside [0, 1]")]
    BadValue { hole: usize, value: f64 },
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Normalised capacitance per hole, 1 = fully covered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t_ms: u64,
    pub values: [f64; HOLES],
}

impl SensorFrame {
    pub fn new(t_ms: u64, values: [f64; HOLES]) -> Result<Self, SensingError> {
        for (hole, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(SensingError::BadValue { hole, value });
            }
        }
        Ok(Self { t_ms, values })
    }

    /// A frame that reads exactly `pattern` (closed = 1.0, open = 0.0).
    pub fn from_pattern(t_ms: u64, pattern: &FingerPattern) -> Self {
        Self {
            t_ms,
            values: pattern.0.map(|h| if h == Hole::Closed { 1.0 } else { 0.0 }),
        }
    }
}

/// Pitch the learner is fingering from `t_ms` on; `None` for an unmapped
/// pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PitchEvent {
    pub t_ms: u64,
    pub pitch: Option<Pitch>,
}

impl PitchEvent {
    pub fn new(t_ms: u64, pitch: Option<Pitch>) -> Self {
        Self { t_ms, pitch }
    }
}

/// A hole reads closed iff its value is at or above the threshold.
pub fn decode_pattern(frame: &SensorFrame, threshold: f64) -> FingerPattern {
    FingerPattern(frame.values.map(|v| if v >= threshold { Hole::Closed } else { Hole::Open }))
}

/// Streaming debouncer. A pattern becomes an event once it is known to have
/// been held for `debounce_ms`, either by a later frame with the same pattern
/// or by the frame that replaces it. The event is stamped with the first
/// frame of the stable run.
#[derive(Debug, Clone)]
pub struct EventDetector {
    chart: FingeringChart,
    threshold: f64,
    debounce_ms: u64,
    run: Option<Run>,
    last_frame_ms: Option<u64>,
    last_emitted: Option<Option<Pitch>>,
}

#[derive(Debug, Clone, Copy)]
struct Run {
    pattern: FingerPattern,
    start_ms: u64,
    confirmed: bool,
}

impl EventDetector {
    pub fn new(chart: FingeringChart, threshold: f64, debounce_ms: u64) -> Result<Self, SensingError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(SensingError::BadThreshold(threshold));
        }
        Ok(Self {
            chart,
            threshold,
            debounce_ms,
            run: None,
            last_frame_ms: None,
            last_emitted: None,
        })
    }

    pub fn push(&mut self, frame: &SensorFrame) -> Result<Vec<PitchEvent>, SensingError> {
        if let Some(last_ms) = self.last_frame_ms {
            if frame.t_ms < last_ms {
                return Err(SensingError::OutOfOrder {
                    t_ms: frame.t_ms,
                    last_ms,
                });
            }
        }
        self.last_frame_ms = Some(frame.t_ms);
        let pattern = decode_pattern(frame, self.threshold);
        let mut out = Vec::new();
        match self.run {
            Some(run) if run.pattern == pattern => {}
            Some(run) => {
                // the old run lasted until this frame
                self.confirm(run, frame.t_ms, &mut out);
                self.run = Some(Run {
                    pattern,
                    start_ms: frame.t_ms,
                    confirmed: false,
                });
            }
            None => {
                self.run = Some(Run {
                    pattern,
                    start_ms: frame.t_ms,
                    confirmed: false,
                });
            }
        }
        if let Some(run) = self.run {
            if self.confirm(run, frame.t_ms, &mut out) {
                self.run = Some(Run { confirmed: true, ..run });
            }
        }
        Ok(out)
    }

    fn confirm(&mut self, run: Run, until_ms: u64, out: &mut Vec<PitchEvent>) -> bool {
        if run.confirmed || until_ms - run.start_ms < self.debounce_ms {
            return run.confirmed;
        }
        let pitch = self.chart.pitch_for_pattern(&run.pattern);
        if self.last_emitted != Some(pitch) {
            self.last_emitted = Some(pitch);
            out.push(PitchEvent::new(run.start_ms, pitch));
        }
        true
    }
}

pub fn events_from_frames(
    frames: &[SensorFrame],
    chart: &FingeringChart,
    threshold: f64,
    debounce_ms: u64,
) -> Result<Vec<PitchEvent>, SensingError> {
    let mut det = EventDetector::new(chart.clone(), threshold, debounce_ms)?;
    let mut out = Vec::new();
    for f in frames {
        out.extend(det.push(f)?);
    }
    Ok(out)
}

/// Parses a recorded trace: one `t v1 v2 v3 v4 v5 v6` frame per line.
pub fn parse_trace(text: &str) -> Result<Vec<SensorFrame>, SensingError> {
    let mut frames = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| SensingError::Parse { line, message };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != HOLES + 1 {
            return Err(err(format!("expected time and {HOLES} values, got {} fields", fields.len())));
        }
        let t_ms = fields[0]
            .parse::<u64>()
            .map_err(|e| err(format!("bad time '{}': {e}", fields[0])))?;
        let mut values = [0.0; HOLES];
        for (v, s) in values.iter_mut().zip(&fields[1..]) {
            *v = s.parse::<f64>().map_err(|e| err(format!("bad value '{s}': {e}")))?;
        }
        let frame = SensorFrame::new(t_ms, values).map_err(|e| err(e.to_string()))?;
        frames.push(frame);
    }
    Ok(frames)
}

/// A frame every `period_ms` from 0 to the score's end, each reading the
/// pattern of the note sounding at that time (the previous note's pattern
/// in rests, all open before the first note).
pub fn frames_for_score(score: &Score, chart: &FingeringChart, period_ms: u64) -> Result<Vec<SensorFrame>, ScoreError> {
    let period = period_ms.max(1);
    let patterns = score
        .notes()
        .iter()
        .map(|n| chart.pattern_for_pitch(n.pitch))
        .collect::<Result<Vec<_>, _>>()?;
    let mut frames = Vec::new();
    let mut current = FingerPattern::ALL_OPEN;
    let mut next = 0;
    let mut t = 0;
    while t <= score.end_ms() {
        while next < score.len() && score.notes()[next].onset_ms <= t {
            current = patterns[next];
            next += 1;
        }
        frames.push(SensorFrame::from_pattern(t, &current));
        t += period;
    }
    Ok(frames)
}

pub fn trace_to_text(frames: &[SensorFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&f.t_ms.to_string());
        for v in f.values {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chart() -> FingeringChart {
        FingeringChart::default_chart()
    }

    /// Splits the raw frame list into maximal runs of equal patterns, keeps
    /// runs that lasted at least `debounce` (until the next run, or the last
    /// frame for the final run), then drops repeats.
    fn oracle(frames: &[SensorFrame], chart: &FingeringChart, threshold: f64, debounce: u64) -> Vec<PitchEvent> {
        let patterns: Vec<FingerPattern> = frames.iter().map(|f| decode_pattern(f, threshold)).collect();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < frames.len() {
            let mut j = i;
            while j + 1 < frames.len() && patterns[j + 1] == patterns[i] {
                j += 1;
            }
            runs.push((i, j));
            i = j + 1;
        }
        let mut out: Vec<PitchEvent> = Vec::new();
        for (k, &(a, b)) in runs.iter().enumerate() {
            let end = if k + 1 < runs.len() { frames[runs[k + 1].0].t_ms } else { frames[b].t_ms };
            if end - frames[a].t_ms >= debounce {
                let pitch = chart.pitch_for_pattern(&patterns[a]);
                if out.last().map(|e| e.pitch) != Some(pitch) {
                    out.push(PitchEvent::new(frames[a].t_ms, pitch));
                }
            }
        }
        out
    }

    fn frame(t: u64, pattern: &str) -> SensorFrame {
        SensorFrame::from_pattern(t, &pattern.parse().unwrap())
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            decode_pattern(&SensorFrame::new(0, [1.0; 6]).unwrap(), 0.5),
            FingerPattern::ALL_CLOSED
        );
        assert_eq!(
            decode_pattern(&SensorFrame::new(0, [0.0; 6]).unwrap(), 0.5),
            FingerPattern::ALL_OPEN
        );
        assert_eq!(
            decode_pattern(&SensorFrame::new(0, [0.5; 6]).unwrap(), 0.5),
            FingerPattern::ALL_CLOSED
        );
        assert!(SensorFrame::new(0, [1.5, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn stable_hold_yields_one_event_at_start() {
        let frames: Vec<_> = (0..=50).map(|t| frame(100 + t, "XXXOOO")).collect();
        let ev = events_from_frames(&frames, &chart(), 0.5, 20).unwrap();
        assert_eq!(ev, vec![PitchEvent::new(100, Some(Pitch(5)))]);
    }

    #[test]
    fn flicker_is_suppressed() {
        let frames: Vec<_> = (0..40)
            .map(|i| frame(i * 5, if i % 2 == 0 { "XXXOOO" } else { "XXXXXX" }))
            .collect();
        let ev = events_from_frames(&frames, &chart(), 0.5, 20).unwrap();
        assert!(ev.is_empty(), "{ev:?}");
    }

    #[test]
    fn unmapped_pattern_gives_none() {
        let frames: Vec<_> = (0..50).map(|t| frame(t, "OXOXOX")).collect();
        let ev = events_from_frames(&frames, &chart(), 0.5, 20).unwrap();
        assert_eq!(ev, vec![PitchEvent::new(0, None)]);
    }

    #[test]
    fn sparse_frames_confirm_on_change() {
        let frames = vec![frame(0, "XXXXXX"), frame(100, "XXXXXO"), frame(110, "XXXXXX")];
        let ev = events_from_frames(&frames, &chart(), 0.5, 30).unwrap();
        assert_eq!(ev, vec![PitchEvent::new(0, Some(Pitch(0)))]);
    }

    #[test]
    fn out_of_order_rejected() {
        let frames = vec![frame(10, "XXXXXX"), frame(5, "XXXXXX")];
        assert_eq!(
            events_from_frames(&frames, &chart(), 0.5, 30),
            Err(SensingError::OutOfOrder { t_ms: 5, last_ms: 10 })
        );
    }

    #[test]
    fn trace_file_roundtrip() {
        let text = "# trace\n0 1 1 1 0 0 0\n10 1 1 1 0 0 0.25\n";
        let frames = parse_trace(text).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].values[5], 0.25);
        assert_eq!(parse_trace(&trace_to_text(&frames)).unwrap(), frames);
        assert!(matches!(parse_trace("0 1 1\n"), Err(SensingError::Parse { line: 1, .. })));
        assert!(matches!(parse_trace("0 1 1 1 1 1 7\n"), Err(SensingError::Parse { line: 1, .. })));
    }

    fn stream() -> impl Strategy<Value = Vec<SensorFrame>> {
        // few distinct patterns so runs and repeats are common
        let pats = ["XXXXXX", "XXXOOO", "OXOXOX", "OOOOOO"];
        prop::collection::vec((0u64..15, 0usize..4, 0.0f64..0.2), 0..80).prop_map(move |steps| {
            let mut t = 0;
            steps
                .into_iter()
                .map(|(dt, p, noise)| {
                    t += dt;
                    let mut f = frame(t, pats[p]);
                    for v in f.values.iter_mut() {
                        *v = if *v > 0.5 { *v - noise } else { *v + noise };
                    }
                    f
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn streaming_matches_oracle(frames in stream(), debounce in 0u64..40) {
            let c = chart();
            let got = events_from_frames(&frames, &c, 0.5, debounce).unwrap();
            prop_assert_eq!(&got, &oracle(&frames, &c, 0.5, debounce));
            for w in got.windows(2) {
                prop_assert_ne!(w[0].pitch, w[1].pitch);
            }
        }

        #[test]
        fn decoding_is_monotone(values in prop::array::uniform6(0.0f64..=1.0), hole in 0usize..6, bump in 0.0f64..=1.0, th in 0.01f64..0.99) {
            let f = SensorFrame::new(0, values).unwrap();
            let mut raised = f;
            raised.values[hole] = (values[hole] + bump).min(1.0);
            if decode_pattern(&f, th).is_closed(hole) {
                prop_assert!(decode_pattern(&raised, th).is_closed(hole));
            }
        }
    }
}
