//! Music to learn: pitches, six-hole fingering patterns, the fingering chart
//! and constant-tempo scores.
//!
//! Two text formats are part of the public contract:
//!
//! ```text
//! # score file
//! tempo 120
//! note <degree> <onset_ms> <duration_ms>
//!
//! # chart file
//! pitch <degree> <six chars of X/O, X = closed>
//! ```
//!
//! Blank lines and `#` comments are ignored in both.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of tone holes (and actuated fingers).
pub const HOLES: usize = 6;

const DEFAULT_CHART: &str = include_str!("../data/default.chart");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsorted onsets: note {index} starts at {onset_ms} ms before its predecessor")]
    Unsorted { index: usize, onset_ms: u64 },
    #[error("overlapping notes: note {index} starts at {onset_ms} ms before the previous note ends at {prev_end_ms} ms")]
    Overlap {
        index: usize,
        onset_ms: u64,
        prev_end_ms: u64,
    },
    #[error("note {index} has zero duration")]
    ZeroDuration { index: usize },
    #[error("tempo must be positive, got {0}")]
    BadTempo(f64),
    #[error("pitch out of chart range: degree {degree} with a {size}-entry chart")]
    PitchOutOfRange { degree: u16, size: usize },
    #[error("unknown pitch {0}")]
    UnknownPitch(Pitch),
    #[error("duplicate chart pitch {0}")]
    DuplicatePitch(Pitch),
    #[error("duplicate chart pattern {0}")]
    DuplicatePattern(FingerPattern),
    #[error("infeasible generator parameters: {0}")]
    InfeasibleParams(String),
    #[error("no matched pair found after {retries} candidate melodies")]
    Infeasible { retries: usize },
}

/// Index into the fingering chart's ascending pitch list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pitch(pub u16);

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hole {
    Closed,
    Open,
}

/// Closure state of the six holes, top hole first. Ordered lexicographically
/// with `Closed < Open`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FingerPattern(pub [Hole; HOLES]);

impl FingerPattern {
    pub const ALL_CLOSED: FingerPattern = FingerPattern([Hole::Closed; HOLES]);
    pub const ALL_OPEN: FingerPattern = FingerPattern([Hole::Open; HOLES]);

    pub fn holes(&self) -> &[Hole; HOLES] {
        &self.0
    }

    pub fn is_closed(&self, finger: usize) -> bool {
        self.0[finger] == Hole::Closed
    }

    /// Number of holes whose state differs.
    pub fn hamming(&self, other: &FingerPattern) -> usize {
        self.0.iter().zip(other.0.iter()).filter(|(a, b)| a != b).count()
    }

    /// Fingers whose state differs, ascending.
    pub fn changed_fingers(&self, other: &FingerPattern) -> Vec<usize> {
        (0..HOLES).filter(|&i| self.0[i] != other.0[i]).collect()
    }

    /// Packs the pattern into the low six bits, bit 0 = top hole, 1 = closed.
    pub fn to_bits(&self) -> u8 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, h)| if *h == Hole::Closed { acc | (1 << i) } else { acc })
    }

    pub fn from_bits(bits: u8) -> Self {
        let mut holes = [Hole::Open; HOLES];
        for (i, h) in holes.iter_mut().enumerate() {
            if bits & (1 << i) != 0 {
                *h = Hole::Closed;
            }
        }
        FingerPattern(holes)
    }
}

impl fmt::Display for FingerPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for h in &self.0 {
            f.write_str(if *h == Hole::Closed { "X" } else { "O" })?;
        }
        Ok(())
    }
}

impl FromStr for FingerPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != HOLES {
            return Err(format!("pattern '{s}' must have exactly {HOLES} X/O characters"));
        }
        let mut holes = [Hole::Open; HOLES];
        for (h, c) in holes.iter_mut().zip(chars) {
            *h = match c {
                'X' | 'x' => Hole::Closed,
                'O' | 'o' => Hole::Open,
                other => return Err(format!("invalid hole character '{other}'")),
            };
        }
        Ok(FingerPattern(holes))
    }
}

/// Static pitch to pattern mapping, injective in both directions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FingeringChart {
    entries: Vec<(Pitch, FingerPattern)>,
    by_pattern: HashMap<FingerPattern, Pitch>,
}

impl FingeringChart {
    pub fn new(mut entries: Vec<(Pitch, FingerPattern)>) -> Result<Self, ScoreError> {
        entries.sort_by_key(|(p, _)| *p);
        let mut by_pattern = HashMap::with_capacity(entries.len());
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ScoreError::DuplicatePitch(w[0].0));
            }
        }
        for (p, fp) in &entries {
            if by_pattern.insert(*fp, *p).is_some() {
                return Err(ScoreError::DuplicatePattern(*fp));
            }
        }
        Ok(Self { entries, by_pattern })
    }

    /// The bundled 12-entry chart: all holes closed is the lowest pitch,
    /// all open the highest.
    pub fn default_chart() -> Self {
        Self::parse(DEFAULT_CHART).expect("bundled chart is valid")
    }

    pub fn parse(text: &str) -> Result<Self, ScoreError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let Some(fields) = content_fields(raw) else {
                continue;
            };
            let err = |message: String| ScoreError::Parse { line, message };
            match fields.as_slice() {
                ["pitch", degree, pattern] => {
                    let degree = degree
                        .parse::<u16>()
                        .map_err(|e| err(format!("bad degree '{degree}': {e}")))?;
                    let pattern = pattern.parse::<FingerPattern>().map_err(err)?;
                    entries.push((Pitch(degree), pattern));
                }
                _ => return Err(err(format!("expected 'pitch <degree> <pattern>', got '{}'", raw.trim()))),
            }
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(p, fp)| format!("pitch {p} {fp}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Pitch, FingerPattern)] {
        &self.entries
    }

    pub fn pitches(&self) -> impl Iterator<Item = Pitch> + '_ {
        self.entries.iter().map(|(p, _)| *p)
    }

    pub fn contains(&self, p: Pitch) -> bool {
        self.entries.binary_search_by_key(&p, |(q, _)| *q).is_ok()
    }

    pub fn pattern_for_pitch(&self, p: Pitch) -> Result<FingerPattern, ScoreError> {
        self.entries
            .binary_search_by_key(&p, |(q, _)| *q)
            .map(|i| self.entries[i].1)
            .map_err(|_| ScoreError::UnknownPitch(p))
    }

    pub fn pitch_for_pattern(&self, fp: &FingerPattern) -> Option<Pitch> {
        self.by_pattern.get(fp).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub pitch: Pitch,
    pub onset_ms: u64,
    pub duration_ms: u64,
}

impl Note {
    pub fn end_ms(&self) -> u64 {
        self.onset_ms + self.duration_ms
    }
}

/// A validated, constant-tempo note sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    notes: Vec<Note>,
    tempo_bpm: f64,
}

impl Score {
    /// Validates ordering, overlap and durations. Chart membership is checked
    /// separately by [`Score::check_chart`].
    pub fn new(notes: Vec<Note>, tempo_bpm: f64) -> Result<Self, ScoreError> {
        if !(tempo_bpm.is_finite() && tempo_bpm > 0.0) {
            return Err(ScoreError::BadTempo(tempo_bpm));
        }
        for (i, n) in notes.iter().enumerate() {
            if n.duration_ms == 0 {
                return Err(ScoreError::ZeroDuration { index: i });
            }
            if i > 0 {
                let prev = &notes[i - 1];
                if n.onset_ms <= prev.onset_ms {
                    return Err(ScoreError::Unsorted {
                        index: i,
                        onset_ms: n.onset_ms,
                    });
                }
                if n.onset_ms < prev.end_ms() {
                    return Err(ScoreError::Overlap {
                        index: i,
                        onset_ms: n.onset_ms,
                        prev_end_ms: prev.end_ms(),
                    });
                }
            }
        }
        Ok(Self { notes, tempo_bpm })
    }

    pub fn parse(text: &str) -> Result<Self, ScoreError> {
        let mut tempo = None;
        let mut notes = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let Some(fields) = content_fields(raw) else {
                continue;
            };
            let err = |message: String| ScoreError::Parse { line, message };
            match fields.as_slice() {
                ["tempo", bpm] => {
                    if tempo.is_some() {
                        return Err(err("duplicate tempo line".into()));
                    }
                    if !notes.is_empty() {
                        return Err(err("tempo must precede notes".into()));
                    }
                    let bpm: f64 = bpm.parse().map_err(|e| err(format!("bad tempo '{bpm}': {e}")))?;
                    tempo = Some(bpm);
                }
                ["note", degree, onset, duration] => {
                    if tempo.is_none() {
                        return Err(err("missing tempo header before first note".into()));
                    }
                    let num = |s: &str, what: &str| {
                        s.parse::<u64>().map_err(|e| err(format!("bad {what} '{s}': {e}")))
                    };
                    let degree = num(degree, "degree")?;
                    let degree = u16::try_from(degree)
                        .map_err(|_| err(format!("degree {degree} too large")))?;
                    notes.push(Note {
                        pitch: Pitch(degree),
                        onset_ms: num(onset, "onset")?,
                        duration_ms: num(duration, "duration")?,
                    });
                }
                _ => return Err(err(format!("unrecognised line '{}'", raw.trim()))),
            }
        }
        let tempo = tempo.ok_or(ScoreError::Parse {
            line: 1,
            message: "missing tempo header".into(),
        })?;
        Score::new(notes, tempo)
    }

    pub fn check_chart(&self, chart: &FingeringChart) -> Result<(), ScoreError> {
        for n in &self.notes {
            if !chart.contains(n.pitch) {
                return Err(ScoreError::PitchOutOfRange {
                    degree: n.pitch.0,
                    size: chart.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("tempo {}\n", self.tempo_bpm);
        for n in &self.notes {
            out.push_str(&format!("note {} {} {}\n", n.pitch, n.onset_ms, n.duration_ms));
        }
        out
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn tempo_bpm(&self) -> f64 {
        self.tempo_bpm
    }

    pub fn pitches(&self) -> Vec<Pitch> {
        self.notes.iter().map(|n| n.pitch).collect()
    }

    pub fn end_ms(&self) -> u64 {
        self.notes.last().map_or(0, Note::end_ms)
    }

    /// Lowest and highest degree, `None` for an empty score.
    pub fn pitch_range(&self) -> Option<(Pitch, Pitch)> {
        let min = self.notes.iter().map(|n| n.pitch).min()?;
        let max = self.notes.iter().map(|n| n.pitch).max()?;
        Some((min, max))
    }

    /// Consecutive note pairs whose pitch differs.
    pub fn interval_count(&self) -> usize {
        self.notes.windows(2).filter(|w| w[0].pitch != w[1].pitch).count()
    }

    pub fn shifted(&self, offset_ms: u64) -> Score {
        let notes = self
            .notes
            .iter()
            .map(|n| Note {
                onset_ms: n.onset_ms + offset_ms,
                ..*n
            })
            .collect();
        Score {
            notes,
            tempo_bpm: self.tempo_bpm,
        }
    }
}

/// Stand-ins for the two study songs, produced by [`generate_matched_pair`]
/// with seed 1 and default parameters.
pub const BUNDLED_SONG_A: &str = include_str!("../data/song_a.score");
pub const BUNDLED_SONG_B: &str = include_str!("../data/song_b.score");

/// Parses score text and checks every pitch against `chart`.
pub fn load_score(text: &str, chart: &FingeringChart) -> Result<Score, ScoreError> {
    let score = Score::parse(text)?;
    score.check_chart(chart)?;
    Ok(score)
}

/// Total Hamming distance between the patterns of consecutive notes.
pub fn movement_count(score: &Score, chart: &FingeringChart) -> Result<usize, ScoreError> {
    let patterns = score
        .notes()
        .iter()
        .map(|n| chart.pattern_for_pitch(n.pitch))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(patterns.windows(2).map(|w| w[0].hamming(&w[1])).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairParams {
    pub length: usize,
    pub low: Pitch,
    pub high: Pitch,
    /// Consecutive pairs with a pitch change, per song.
    pub intervals: usize,
    pub note_ms: u64,
    pub tempo_bpm: f64,
    pub max_candidates: usize,
}

impl Default for PairParams {
    fn default() -> Self {
        Self {
            length: 16,
            low: Pitch(0),
            high: Pitch(5),
            intervals: 12,
            note_ms: 500,
            tempo_bpm: 120.0,
            max_candidates: 20_000,
        }
    }
}

/// Two distinct songs with equal pitch range, interval count and finger
/// movement count. Deterministic for a given seed.
pub fn generate_matched_pair(
    seed: u64,
    params: &PairParams,
    chart: &FingeringChart,
) -> Result<(Score, Score), ScoreError> {
    let infeasible = |m: String| Err(ScoreError::InfeasibleParams(m));
    if params.length == 0 {
        return infeasible("length must be at least 1".into());
    }
    if params.low > params.high {
        return infeasible(format!("low {} above high {}", params.low, params.high));
    }
    for p in [params.low, params.high] {
        if !chart.contains(p) {
            return Err(ScoreError::PitchOutOfRange {
                degree: p.0,
                size: chart.len(),
            });
        }
    }
    if params.intervals > params.length - 1 {
        return infeasible(format!(
            "{} intervals do not fit in {} notes",
            params.intervals, params.length
        ));
    }
    if params.low != params.high && params.intervals == 0 {
        return infeasible("a non-trivial range needs at least one interval".into());
    }
    if params.note_ms == 0 {
        return infeasible("note_ms must be positive".into());
    }
    let palette: Vec<Pitch> = chart
        .pitches()
        .filter(|p| *p >= params.low && *p <= params.high)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashMap<usize, Vec<Pitch>> = HashMap::new();
    for _ in 0..params.max_candidates {
        let melody = candidate_melody(&mut rng, &palette, params);
        let min = *melody.iter().min().expect("non-empty");
        let max = *melody.iter().max().expect("non-empty");
        if min != params.low || max != params.high {
            continue;
        }
        let moves: usize = melody
            .windows(2)
            .map(|w| {
                let a = chart.pattern_for_pitch(w[0]).expect("palette pitch");
                let b = chart.pattern_for_pitch(w[1]).expect("palette pitch");
                a.hamming(&b)
            })
            .sum();
        match seen.get(&moves) {
            Some(first) if *first != melody => {
                return Ok((melody_score(first, params)?, melody_score(&melody, params)?));
            }
            Some(_) => {}
            None => {
                seen.insert(moves, melody);
            }
        }
    }
    Err(ScoreError::Infeasible {
        retries: params.max_candidates,
    })
}

fn candidate_melody(rng: &mut ChaCha8Rng, palette: &[Pitch], params: &PairParams) -> Vec<Pitch> {
    let slots = params.length - 1;
    let mut steps = vec![false; slots];
    for i in sample(rng, slots, params.intervals).into_iter() {
        steps[i] = true;
    }
    let mut current = palette[rng.random_range(0..palette.len())];
    let mut melody = Vec::with_capacity(params.length);
    melody.push(current);
    for step in steps {
        if step {
            let others: Vec<Pitch> = palette.iter().copied().filter(|p| *p != current).collect();
            current = others[rng.random_range(0..others.len())];
        }
        melody.push(current);
    }
    melody
}

fn melody_score(melody: &[Pitch], params: &PairParams) -> Result<Score, ScoreError> {
    let notes = melody
        .iter()
        .enumerate()
        .map(|(i, p)| Note {
            pitch: *p,
            onset_ms: i as u64 * params.note_ms,
            duration_ms: params.note_ms,
        })
        .collect();
    Score::new(notes, params.tempo_bpm)
}

/// Whitespace-split fields of a line with comments removed; `None` if blank.
fn content_fields(raw: &str) -> Option<Vec<&str>> {
    let content = raw.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        None
    } else {
        Some(content.split_whitespace().collect())
    }
}
