//! Brute-force reference for adaptive mistake detection and the randomized
//! case generator used to compare it against the streaming tutor.
//!
//! The reference works on the whole event list at once and shares no code
//! with [`crate::tutor`] beyond the data types.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::score::{FingeringChart, Note, Pitch, Score};
use crate::sensing::PitchEvent;
use crate::tutor::{Mode, NoteStatus, TutorConfig, TutorSession};

/// Per note, whether it is a mistake: no correct pitch sounding at any point
/// of `[onset, onset + delta_t]`. Assumes an unscaled tempo.
pub fn brute_force_missed(score: &Score, trace: &[PitchEvent], delta_t_ms: u64) -> Vec<bool> {
    score
        .notes()
        .iter()
        .map(|n| {
            let t = n.onset_ms;
            let carried = trace
                .iter()
                .rev()
                .find(|e| e.t_ms < t)
                .is_some_and(|e| e.pitch == Some(n.pitch));
            let inside = trace
                .iter()
                .any(|e| e.t_ms >= t && e.t_ms <= t + delta_t_ms && e.pitch == Some(n.pitch));
            !(carried || inside)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OracleCase {
    pub seed: u64,
    pub score: Score,
    pub trace: Vec<PitchEvent>,
}

/// Random score plus a trace biased toward the window boundaries.
pub fn random_case(seed: u64, chart: &FingeringChart, delta_t_ms: u64) -> OracleCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<Pitch> = chart.pitches().collect();
    let palette_len = rng.random_range(1..=all.len().max(1));
    let palette = &all[..palette_len];

    let n = rng.random_range(1..=12);
    let mut t = rng.random_range(0..500u64);
    let mut notes = Vec::with_capacity(n);
    for _ in 0..n {
        let duration_ms = if rng.random_bool(0.3) {
            rng.random_range(1..delta_t_ms + 50)
        } else {
            rng.random_range(1..600)
        };
        notes.push(Note {
            pitch: palette[rng.random_range(0..palette.len())],
            onset_ms: t,
            duration_ms,
        });
        t += duration_ms;
        if rng.random_bool(0.4) {
            t += rng.random_range(0..300);
        }
    }
    let score = Score::new(notes, 120.0).expect("generated notes are sorted and disjoint");

    let mut trace = Vec::new();
    for note in score.notes() {
        for _ in 0..rng.random_range(0..=3) {
            let onset = note.onset_ms as i64;
            let dt = delta_t_ms as i64;
            let at = match rng.random_range(0..7) {
                0 => onset - 1,
                1 => onset,
                2 => onset + dt - 1,
                3 => onset + dt,
                4 => onset + dt + 1,
                _ => onset + rng.random_range(-300..400),
            };
            let pitch = match rng.random_range(0..10) {
                0..=4 => Some(note.pitch),
                5 => None,
                _ => Some(palette[rng.random_range(0..palette.len())]),
            };
            trace.push(PitchEvent::new(at.max(0) as u64, pitch));
        }
    }
    for _ in 0..rng.random_range(0..4) {
        let at = rng.random_range(0..t + 500);
        trace.push(PitchEvent::new(at, Some(all[rng.random_range(0..all.len())])));
    }
    trace.sort_by_key(|e| e.t_ms);
    OracleCase { seed, score, trace }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleSummary {
    pub cases: usize,
    pub agreed: usize,
    pub notes: usize,
    pub mistakes: usize,
    pub first_disagreement: Option<u64>,
}

/// Runs `cases` random cases through the adaptive tutor and the brute-force
/// reference, counting exact agreement of the per-note verdicts and of the
/// emitted mistake reports.
pub fn run_oracle(cases: usize, base_seed: u64, chart: &FingeringChart, cfg: &TutorConfig) -> OracleSummary {
    let mut summary = OracleSummary {
        cases,
        ..OracleSummary::default()
    };
    for i in 0..cases as u64 {
        let case = random_case(base_seed.wrapping_add(i), chart, cfg.delta_t_ms);
        let expected = brute_force_missed(&case.score, &case.trace, cfg.delta_t_ms);
        let unscaled = TutorConfig {
            tempo_scale: 1.0,
            ..*cfg
        };
        let mut session =
            TutorSession::new(&case.score, chart, Mode::Adaptive, unscaled).expect("case uses chart pitches");
        let tick_ms = 1 + (i % 13);
        let agreed = match session.run_to_completion(&case.trace, tick_ms) {
            Ok(log) => {
                let mut reported = vec![false; case.score.len()];
                for e in log {
                    if let crate::tutor::LogEntry::Mistake(m) = e {
                        reported[m.note_index] = true;
                        let onset = case.score.notes()[m.note_index].onset_ms;
                        if m.score_time_ms != onset || m.detected_at_ms != onset + cfg.delta_t_ms {
                            reported[m.note_index] = false;
                        }
                    }
                }
                let verdicts: Vec<bool> = session.status().iter().map(|s| *s == NoteStatus::Missed).collect();
                reported == expected && verdicts == expected
            }
            Err(_) => false,
        };
        summary.notes += expected.len();
        summary.mistakes += expected.iter().filter(|m| **m).count();
        if agreed {
            summary.agreed += 1;
        } else if summary.first_disagreement.is_none() {
            summary.first_disagreement = Some(case.seed);
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_examples() {
        let score = Score::new(
            vec![Note {
                pitch: Pitch(3),
                onset_ms: 1000,
                duration_ms: 500,
            }],
            60.0,
        )
        .unwrap();
        let hit = [PitchEvent::new(1150, Some(Pitch(3)))];
        let late = [PitchEvent::new(1201, Some(Pitch(3)))];
        assert_eq!(brute_force_missed(&score, &hit, 200), vec![false]);
        assert_eq!(brute_force_missed(&score, &late, 200), vec![true]);
        assert_eq!(brute_force_missed(&score, &[], 200), vec![true]);
        let early = [PitchEvent::new(10, Some(Pitch(3)))];
        assert_eq!(brute_force_missed(&score, &early, 200), vec![false]);
    }

    #[test]
    fn cases_are_deterministic_and_sorted() {
        let chart = FingeringChart::default_chart();
        let a = random_case(42, &chart, 200);
        let b = random_case(42, &chart, 200);
        assert_eq!(a.score, b.score);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
    }

    #[test]
    fn small_oracle_run_agrees() {
        let chart = FingeringChart::default_chart();
        let s = run_oracle(300, 7, &chart, &TutorConfig::default());
        assert_eq!(s.agreed, 300, "first disagreement: {:?}", s.first_disagreement);
        assert!(s.mistakes > 0 && s.mistakes < s.notes);
    }
}
