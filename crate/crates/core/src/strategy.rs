//! Scaffolded phase progression, exam grading and the study metrics.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{Pitch, Score};
use crate::sensing::PitchEvent;
use crate::tutor::Mode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("learning time must be positive, got {0} min")]
    NonPositiveTime(f64),
    #[error("learned fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("forgotten notes {forgotten} outside 0..={total}")]
    BadCount { forgotten: usize, total: usize },
    #[error("forgetting chance of an empty group is undefined")]
    EmptyGroup,
    #[error("invalid strategy config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Mandatory,
    Hinted,
    Adaptive,
    Test,
}

impl Phase {
    /// Guidance mode used while practising in this phase; `None` for the
    /// unguided exam.
    pub fn mode(self) -> Option<Mode> {
        match self {
            Phase::Mandatory => Some(Mode::Mandatory),
            Phase::Hinted => Some(Mode::Hinted),
            Phase::Adaptive => Some(Mode::Adaptive),
            Phase::Test => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Mandatory => "mandatory",
            Phase::Hinted => "hinted",
            Phase::Adaptive => "adaptive",
            Phase::Test => "test",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mandatory" => Ok(Phase::Mandatory),
            "hinted" => Ok(Phase::Hinted),
            "adaptive" => Ok(Phase::Adaptive),
            "test" => Ok(Phase::Test),
            other => Err(format!("unknown phase '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub advance_error_threshold: f64,
    pub regress_error_threshold: f64,
    pub min_passes_per_phase: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            advance_error_threshold: 0.15,
            regress_error_threshold: 0.5,
            min_passes_per_phase: 1,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.advance_error_threshold) || !unit.contains(&self.regress_error_threshold) {
            return Err(MetricError::InvalidConfig("thresholds must lie in [0, 1]".into()));
        }
        if self.regress_error_threshold <= self.advance_error_threshold {
            return Err(MetricError::InvalidConfig(
                "regress threshold must exceed the advance threshold".into(),
            ));
        }
        if self.min_passes_per_phase == 0 {
            return Err(MetricError::InvalidConfig("min_passes_per_phase must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one practice pass or exam attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassOutcome {
    pub phase: Phase,
    pub mistake_count: usize,
    pub note_count: usize,
    pub duration_ms: u64,
    /// Verdict of an unguided exam; `None` for guided passes.
    #[serde(default)]
    pub exam_passed: Option<bool>,
}

impl PassOutcome {
    /// Mistakes per note. Mandatory passes always read 0: the device moves
    /// the fingers, so nothing the learner does is observable.
    pub fn mistake_fraction(&self) -> f64 {
        if self.phase == Phase::Mandatory || self.note_count == 0 {
            0.0
        } else {
            self.mistake_count as f64 / self.note_count as f64
        }
    }

    /// An exam fails on its verdict when it has one, otherwise on any
    /// mistake.
    pub fn failed(&self) -> bool {
        self.exam_passed.map_or(self.mistake_count > 0, |p| !p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Static,
    Dynamic,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Static => "static",
            StrategyKind::Dynamic => "dynamic",
        }
    }

    pub fn table(self) -> PhaseTable {
        match self {
            StrategyKind::Static => PhaseTable::static_baseline(),
            StrategyKind::Dynamic => PhaseTable::dynamic(),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(StrategyKind::Static),
            "dynamic" => Ok(StrategyKind::Dynamic),
            other => Err(format!("unknown strategy '{other}' (static|dynamic)")),
        }
    }
}

/// Ordered phases a strategy walks through. The static baseline and the
/// dynamic strategy differ only in their tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTable(Vec<Phase>);

impl PhaseTable {
    pub fn dynamic() -> Self {
        PhaseTable(vec![Phase::Mandatory, Phase::Hinted, Phase::Adaptive, Phase::Test])
    }

    pub fn static_baseline() -> Self {
        PhaseTable(vec![Phase::Mandatory, Phase::Test])
    }

    pub fn phases(&self) -> &[Phase] {
        &self.0
    }

    pub fn first(&self) -> Phase {
        self.0[0]
    }

    pub fn contains(&self, p: Phase) -> bool {
        self.0.contains(&p)
    }

    /// Decides the phase for the next pass.
    ///
    /// Advances one step when the pass was clean enough and the phase has had
    /// its minimum number of passes, regresses one step when it was bad
    /// enough, otherwise stays. The first phase never regresses. The exam
    /// phase is terminal on success and regresses on any mistake.
    pub fn next_phase(
        &self,
        current: Phase,
        outcome: &PassOutcome,
        history: &[PassOutcome],
        cfg: &StrategyConfig,
    ) -> Phase {
        let Some(pos) = self.0.iter().position(|p| *p == current) else {
            return self.first();
        };
        let prev = if pos > 0 { self.0[pos - 1] } else { current };
        if current == Phase::Test {
            return if outcome.failed() { prev } else { current };
        }
        let fraction = outcome.mistake_fraction();
        let passes = 1 + history.iter().rev().take_while(|h| h.phase == current).count();
        if fraction <= cfg.advance_error_threshold && passes >= cfg.min_passes_per_phase {
            self.0.get(pos + 1).copied().unwrap_or(current)
        } else if fraction >= cfg.regress_error_threshold {
            prev
        } else {
            current
        }
    }
}

/// Dynamic-strategy progression.
pub fn next_phase(current: Phase, outcome: &PassOutcome, history: &[PassOutcome], cfg: &StrategyConfig) -> Phase {
    PhaseTable::dynamic().next_phase(current, outcome, history, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExamStrictness {
    /// The played sequence must equal the score's.
    #[default]
    Exact,
    /// The score's sequence must appear contiguously in the played one;
    /// stray notes before or after are tolerated.
    Contiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamResult {
    pub played: Vec<Pitch>,
    pub pass: bool,
    pub forgotten_notes: usize,
}

/// Grades an unguided performance against the score.
///
/// Sensing reports fingering changes only, so a run of repeated pitches in
/// the score is heard as one event. The verdict compares both sequences with
/// repeats collapsed; the forgotten count is the fewest score notes to drop
/// so that the rest could have produced what was heard. Of several events
/// sharing a timestamp only the last one sounded.
pub fn grade_exam(score: &Score, events: &[PitchEvent], strictness: ExamStrictness) -> ExamResult {
    let played: Vec<Pitch> = events
        .iter()
        .enumerate()
        .filter(|(i, e)| events.get(i + 1).is_none_or(|n| n.t_ms != e.t_ms))
        .filter_map(|(_, e)| e.pitch)
        .collect();
    let played_runs = collapse(&played);
    let score_seq = collapse(&score.pitches());

    let matched = matched_notes(&score.pitches(), &played_runs);
    let forgotten_notes = score.len() - matched;
    let pass = match strictness {
        ExamStrictness::Exact => played_runs == score_seq,
        ExamStrictness::Contiguous => {
            !score_seq.is_empty() && played_runs.windows(score_seq.len()).any(|w| w == score_seq.as_slice())
                || score_seq.is_empty()
        }
    };
    ExamResult {
        played,
        pass,
        forgotten_notes,
    }
}

fn collapse(seq: &[Pitch]) -> Vec<Pitch> {
    let mut out: Vec<Pitch> = Vec::with_capacity(seq.len());
    for p in seq {
        if out.last() != Some(p) {
            out.push(*p);
        }
    }
    out
}

/// Largest set of score notes whose pitch sequence, with repeats
/// collapsed, is a subsequence of the heard runs. Consecutive kept notes of
/// one pitch may share a run: a learner who skips the 2 in `0 2 0` is heard
/// holding a single 0.
fn matched_notes(score: &[Pitch], heard: &[Pitch]) -> usize {
    // best[k]: most notes kept so far with the last one heard in run k
    let mut best: Vec<Option<usize>> = vec![None; heard.len()];
    for p in score {
        let mut before: Option<usize> = Some(0);
        for (k, r) in heard.iter().enumerate() {
            let old = best[k];
            if r == p {
                let take = before.max(old).map(|n| n + 1);
                best[k] = best[k].max(take);
            }
            before = before.max(old);
        }
    }
    best.into_iter().flatten().max().unwrap_or(0)
}

/// Percentage of a piece learned per minute.
pub fn learning_rate(fraction_learned: f64, minutes: f64) -> Result<f64, MetricError> {
    if !(0.0..=1.0).contains(&fraction_learned) {
        return Err(MetricError::BadFraction(fraction_learned));
    }
    if !(minutes > 0.0 && minutes.is_finite()) {
        return Err(MetricError::NonPositiveTime(minutes));
    }
    Ok(100.0 * fraction_learned / minutes)
}

/// Forgotten notes over total notes; 0 means fully memorised.
pub fn forgetting_ratio(forgotten: usize, total: usize) -> Result<f64, MetricError> {
    if total == 0 || forgotten > total {
        return Err(MetricError::BadCount { forgotten, total });
    }
    Ok(forgotten as f64 / total as f64)
}

/// Fraction of re-exams that failed.
pub fn forgetting_chance(results: &[ExamResult]) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::EmptyGroup);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    Ok(failed as f64 / results.len() as f64)
}

/// Two-sided exact sign test p-value for paired outcomes; ties are dropped
/// before calling. Returns 1 when there are no untied pairs.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    let mut pmf = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for i in 0..=k {
        tail += pmf;
        pmf *= (n - i) as f64 / (i + 1) as f64;
    }
    (2.0 * tail).min(1.0)
}
