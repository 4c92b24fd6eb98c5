use haptutor::config::EngineConfig;
use haptutor::score::{FingeringChart, Score};
use haptutor::sensing::{PitchEvent, SensorFrame};
use haptutor::service::{
    create_session, replay, AuditEntry, Inbound, InboundMessage, Outbound, OutboundMessage, ScoreLibrary, Session,
    SessionState,
};
use haptutor::simlab::{pass_duration_ms, simulate_pass, LearnerModel, LearnerParams, SimConfig};
use haptutor::strategy::{Phase, StrategyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TICK_MS: u64 = 10;

fn new_session(strategy: StrategyKind) -> Session {
    create_session(&ScoreLibrary::bundled(), 3, "a", strategy, &EngineConfig::default()).unwrap()
}

fn frame(chart: &FingeringChart, pitch: Option<haptutor::score::Pitch>) -> Inbound {
    let pattern = pitch.map_or(haptutor::score::FingerPattern::ALL_OPEN, |p| chart.pattern_for_pitch(p).unwrap());
    Inbound::Frame {
        values: SensorFrame::from_pattern(0, &pattern).values,
    }
}

/// Drives a session with a fully trained simulated learner, one sensor frame
/// per tick, until the session ends.
fn master_learner_run(strategy: StrategyKind) -> (Session, Vec<OutboundMessage>) {
    let lib = ScoreLibrary::bundled();
    let score: Score = lib.get("a").unwrap().clone();
    let chart = lib.chart().clone();
    let cfg = SimConfig::default();
    let params = LearnerParams {
        motor_noise: 0.0,
        ..LearnerParams::default()
    };
    let learner = LearnerModel::with_state(params, vec![1.0; score.len()], vec![1.0; score.len()]).unwrap();
    let dur = pass_duration_ms(&score, &cfg.tutor);

    let mut session = new_session(strategy);
    let mut out = session.pump(&[Inbound::Start], 0).unwrap();
    let mut holding = None;
    let mut pass = 0u64;
    while session.state() != SessionState::Done && pass < 20 {
        let start = pass * dur;
        let sim = simulate_pass(&learner, &score, &chart, session.phase(), &cfg, pass).unwrap();
        let mut trace: &[PitchEvent] = &sim.trace;
        let mut t = start;
        while t < start + dur && session.state() != SessionState::Done {
            while let Some(e) = trace.first().filter(|e| start + e.t_ms <= t) {
                holding = e.pitch;
                trace = &trace[1..];
            }
            out.extend(session.pump(&[frame(&chart, holding)], t).unwrap());
            t += TICK_MS;
        }
        pass += 1;
    }
    out.extend(session.pump(&[], pass * dur).unwrap());
    (session, out)
}

#[test]
fn trained_learner_completes_every_dynamic_phase() {
    let (session, out) = master_learner_run(StrategyKind::Dynamic);
    assert_eq!(session.state(), SessionState::Done);
    let phases: Vec<Phase> = session.history().iter().map(|h| h.phase).collect();
    assert_eq!(phases, [Phase::Mandatory, Phase::Hinted, Phase::Adaptive, Phase::Test]);
    assert!(!out.iter().any(|m| matches!(m.body, Outbound::Mistake { .. })));
    let last = out
        .iter()
        .rev()
        .find_map(|m| match &m.body {
            Outbound::Metrics(x) => Some(x),
            _ => None,
        })
        .unwrap();
    assert!(last.done);
    assert_eq!(last.exam_pass, Some(true));
    assert_eq!(last.pass, 4);
}

#[test]
fn trained_learner_static_needs_two_passes() {
    let (session, _) = master_learner_run(StrategyKind::Static);
    let phases: Vec<Phase> = session.history().iter().map(|h| h.phase).collect();
    assert_eq!(phases, [Phase::Mandatory, Phase::Test]);
}

fn legal(from: SessionState, to: SessionState) -> bool {
    use SessionState::*;
    matches!(
        (from, to),
        (Idle, Running) | (Idle, Exam) | (Running, Exam) | (Exam, Running) | (Running, Done) | (Exam, Done)
    )
}

/// Random client behaviour: frames, junk, overrides, exam requests.
fn chaotic_lines(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut lines = Vec::new();
    for _ in 0..rng.random_range(0..3) {
        let msg = match rng.random_range(0..40) {
            0 => Inbound::PhaseOverride {
                phase: [Phase::Mandatory, Phase::Hinted, Phase::Adaptive, Phase::Test][rng.random_range(0..4)],
            },
            1 => Inbound::ExamRequest,
            2 => Inbound::Hello,
            3 => {
                lines.push("{\"v\":1,\"type\":\"teleport\"}".to_string());
                continue;
            }
            _ => Inbound::Frame {
                values: std::array::from_fn(|_| if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..1.0) }),
            },
        };
        lines.push(InboundMessage::new(msg).to_line());
    }
    lines
}

/// Records released by the same cause never step back in time.
fn in_time_order(out: &[OutboundMessage]) -> bool {
    out.windows(2).all(|w| w[0].cause != w[1].cause || w[0].t <= w[1].t)
}

#[test]
fn every_outbound_message_is_attributed() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = new_session(StrategyKind::Dynamic);
        let mut all = s.pump(&[Inbound::Start], 0).unwrap();
        let mut prev_now = 0;
        let mut now = 0;
        while now < 60_000 && s.state() != SessionState::Done {
            now += rng.random_range(1..40);
            let out = s.pump_lines(&chaotic_lines(&mut rng), now).unwrap();
            for m in &out {
                assert!(m.t >= prev_now && m.t <= now, "seed {seed}: t {} outside ({prev_now}, {now}]", m.t);
                assert_eq!(m.v, 1);
            }
            assert!(in_time_order(&out), "seed {seed}");
            all.extend(out);
            prev_now = now;
        }

        let mut sent = all.iter();
        let mut open_cause: Option<String> = None;
        let mut state = SessionState::Idle;
        let (mut inbound_seen, mut ticks_seen) = (0u64, 0u64);
        for entry in s.audit() {
            match entry {
                AuditEntry::Inbound { index, .. } => {
                    assert_eq!(*index, inbound_seen);
                    inbound_seen += 1;
                    open_cause = Some(format!("in:{index}"));
                }
                AuditEntry::Tick { index, .. } => {
                    assert_eq!(*index, ticks_seen);
                    ticks_seen += 1;
                    open_cause = Some(format!("tick:{index}"));
                }
                AuditEntry::Outbound { cause, t, kind } => {
                    let m = sent.next().expect("audit lists no extra message");
                    assert_eq!(Some(cause), open_cause.as_ref(), "seed {seed}");
                    assert_eq!((&m.cause, m.t), (cause, *t));
                    assert!(m.to_line().contains(&format!("\"type\":\"{kind}\"")));
                }
                AuditEntry::StateChange { from, to } => {
                    assert_eq!(*from, state);
                    assert!(legal(*from, *to), "seed {seed}: {from} -> {to}");
                    state = *to;
                }
            }
        }
        assert!(sent.next().is_none(), "seed {seed}: message missing from audit");

        let live: Vec<String> = all.iter().map(OutboundMessage::to_line).collect();
        assert_eq!(replay(&s.recording_text(), &ScoreLibrary::bundled()).unwrap(), live, "seed {seed}");
    }
}

#[test]
fn silent_adaptive_pass_streams_mistakes() {
    let mut s = new_session(StrategyKind::Dynamic);
    s.pump(&[Inbound::Start, Inbound::PhaseOverride { phase: Phase::Adaptive }], 0).unwrap();
    let score = ScoreLibrary::bundled().get("a").unwrap().clone();
    let mut mistakes = Vec::new();
    for now in (TICK_MS..=score.end_ms() + 200).step_by(TICK_MS as usize) {
        for m in s.pump(&[], now).unwrap() {
            if let Outbound::Mistake { note, pass: 1, .. } = m.body {
                mistakes.push(note);
            }
        }
    }
    assert_eq!(mistakes, (0..score.len()).collect::<Vec<_>>());

    // One late pump releases a whole pass of cues at once.
    let mut s = new_session(StrategyKind::Dynamic);
    s.pump(&[Inbound::Start], 0).unwrap();
    let burst = s.pump(&[], 3 * score.end_ms()).unwrap();
    assert!(burst.len() > score.len());
    assert!(in_time_order(&burst));
}

#[test]
fn done_and_idle_sessions_reject() {
    let mut s = new_session(StrategyKind::Dynamic);
    let out = s.pump(&[Inbound::Stop, Inbound::ExamRequest], 0).unwrap();
    assert!(out.iter().all(|m| matches!(m.body, Outbound::Rejected { .. })));
    assert_eq!(s.state(), SessionState::Idle);

    s.pump(&[Inbound::Start], 5).unwrap();
    s.pump(&[Inbound::Stop], 6).unwrap();
    let out = s.pump(&[Inbound::Start], 7).unwrap();
    assert!(matches!(out[0].body, Outbound::Rejected { .. }));
    assert_eq!(s.state(), SessionState::Done);
}

#[test]
fn hello_resyncs_a_reconnecting_client() {
    let mut s = new_session(StrategyKind::Dynamic);
    s.pump(&[Inbound::Start], 0).unwrap();
    for now in (10..1200).step_by(10) {
        s.pump(&[], now).unwrap();
    }
    let out = s.pump(&[Inbound::Hello], 1200).unwrap();
    let Outbound::Session { phase, state, pass, .. } = &out[0].body else {
        panic!("expected a snapshot, got {:?}", out[0]);
    };
    assert_eq!((*phase, *state, *pass), (Phase::Mandatory, SessionState::Running, 1));
    let Outbound::ClutchState { clutches } = &out[1].body else {
        panic!("expected clutch snapshot");
    };
    assert_eq!(*clutches, s.clutches());
}

#[test]
fn independent_sessions_run_concurrently() {
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = new_session(StrategyKind::Dynamic);
        let mut out = s.pump(&[Inbound::Start], 0).unwrap();
        for now in (10..5000).step_by(10) {
            out.extend(s.pump_lines(&chaotic_lines(&mut rng), now).unwrap());
        }
        out.iter().map(OutboundMessage::to_line).collect::<Vec<_>>()
    };
    let serial: Vec<_> = (0..4).map(run).collect();
    let threaded: Vec<_> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..4).map(|i| sc.spawn(move || run(i))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, threaded);
}
