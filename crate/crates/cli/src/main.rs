use std::fs;
use std::fmt::Write as _;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use futures_util::{SinkExt, StreamExt};
use haptutor::check::run_oracle;
use haptutor::config::EngineConfig;
use haptutor::score::{load_score, FingeringChart, Score};
use haptutor::sensing::{events_from_frames, frames_for_score, parse_trace, trace_to_text};
use haptutor::service::{create_session, replay, ScoreLibrary, SessionState};
use haptutor::simlab::{run_protocol, seed_list, summaries_from_raw, SongPair};
use haptutor::strategy::StrategyKind;
use haptutor::tutor::{log_to_text, Mode, TutorSession};
use haptutor::wire;
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::handshake::server::{Request, Response};
use tokio_tungstenite::tungstenite::Message;

#[derive(Parser)]
#[command(name = "haptutor", version, about = "Haptic flute tutoring engine")]
struct Cli {
    /// Engine configuration (TOML); built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated two-condition study and write its report.
    Experiment {
        /// Learners per condition; the configured count otherwise.
        #[arg(long)]
        participants: Option<usize>,
        /// Independent runs of the whole study.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Base seed; run k uses base + k * 1000000.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory for report.txt, raw.log and table.txt.
        #[arg(long, default_value = "experiment-out")]
        out: PathBuf,
        /// Single-threaded; output is identical either way.
        #[arg(long)]
        serial: bool,
    },
    /// Render the per-condition table from a raw pass log.
    Table { raw: PathBuf },
    /// Play a sensor trace through one tutoring pass, or re-run a recorded
    /// channel session.
    Replay {
        /// Score file, or the id of a bundled song (a, b).
        #[arg(long, required_unless_present = "recording")]
        score: Option<String>,
        /// Sensor trace: time in ms and six coverage values per line.
        #[arg(long, required_unless_present = "recording")]
        trace: Option<PathBuf>,
        /// Guidance mode for the pass.
        #[arg(long, default_value = "adaptive")]
        mode: Mode,
        /// Fingering chart file; the default chart otherwise.
        #[arg(long)]
        chart: Option<PathBuf>,
        /// A recording written by `serve --record`; prints its outbound log.
        #[arg(long, conflicts_with_all = ["score", "trace"])]
        recording: Option<PathBuf>,
        /// Write the log here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare adaptive mistake detection against a brute-force scan.
    Oracle {
        #[arg(long, default_value_t = 10_000)]
        cases: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Pretty-print wire frames from a binary capture or hex text.
    Frames {
        /// File to read; stdin when absent.
        input: Option<PathBuf>,
        /// Treat the input as whitespace-separated hex bytes.
        #[arg(long)]
        hex: bool,
    },
    /// Write a sensor trace that plays a score perfectly.
    Synth {
        #[arg(long)]
        score: String,
        #[arg(long, default_value_t = 10)]
        period_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
    /// Serve practice sessions over websocket.
    Serve {
        /// Overrides the configured port; 0 picks a free one.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory to write one recording per finished connection.
        #[arg(long)]
        record: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    match cli.command {
        Command::Experiment {
            participants,
            seeds,
            seed,
            out,
            serial,
        } => experiment(&config, participants, seeds, seed, &out, serial),
        Command::Table { raw } => table(&raw),
        Command::Replay {
            recording: Some(rec),
            out,
            ..
        } => {
            let text = read(&rec)?;
            let lines = replay(&text, &ScoreLibrary::bundled())?;
            let mut body = lines.join("\n");
            body.push('\n');
            emit(out.as_deref(), &body)
        }
        Command::Replay {
            score,
            trace,
            mode,
            chart,
            out,
            ..
        } => {
            let chart = load_chart(chart.as_deref())?;
            let score = resolve_score(score.as_deref().unwrap_or_default(), &chart)?;
            let trace = trace.context("--trace is required")?;
            replay_trace(&config, &score, &chart, &trace, mode, out.as_deref())
        }
        Command::Oracle { cases, seed } => {
            let started = Instant::now();
            let s = run_oracle(cases, seed, &FingeringChart::default_chart(), &config.tutor);
            println!("agreement {}/{}", s.agreed, s.cases);
            eprintln!(
                "notes={} mistakes={} elapsed={:.2}s",
                s.notes,
                s.mistakes,
                started.elapsed().as_secs_f64()
            );
            if let Some(seed) = s.first_disagreement {
                bail!("first disagreement at case seed {seed}");
            }
            Ok(())
        }
        Command::Frames { input, hex } => {
            let bytes = match &input {
                Some(p) => fs::read(p).with_context(|| format!("reading {}", p.display()))?,
                None => {
                    let mut buf = Vec::new();
                    std::io::stdin().read_to_end(&mut buf)?;
                    buf
                }
            };
            let bytes = if hex {
                wire::parse_hex(&String::from_utf8_lossy(&bytes)).map_err(anyhow::Error::msg)?
            } else {
                bytes
            };
            emit(None, &wire::dump(&bytes))
        }
        Command::Synth { score, period_ms, out } => {
            let chart = FingeringChart::default_chart();
            let score = resolve_score(&score, &chart)?;
            let frames = frames_for_score(&score, &chart, period_ms)?;
            emit(out.as_deref(), &trace_to_text(&frames))
        }
        Command::Config => emit(None, &config.to_toml()),
        Command::Serve { port, host, record } => {
            let port = port.unwrap_or(config.link.port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(config, host, port, record))
        }
    }
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn load_chart(path: Option<&Path>) -> Result<FingeringChart> {
    Ok(match path {
        Some(p) => FingeringChart::parse(&read(p)?)?,
        None => FingeringChart::default_chart(),
    })
}

/// A bundled song id or a path to a score file.
fn resolve_score(arg: &str, chart: &FingeringChart) -> Result<Score> {
    let lib = ScoreLibrary::bundled();
    if let Some(s) = lib.get(arg) {
        return Ok(s.clone());
    }
    let text = read(Path::new(arg))?;
    load_score(&text, chart).with_context(|| format!("loading score {arg}"))
}

fn replay_trace(
    config: &EngineConfig,
    score: &Score,
    chart: &FingeringChart,
    trace: &Path,
    mode: Mode,
    out: Option<&Path>,
) -> Result<()> {
    let frames = parse_trace(&read(trace)?).with_context(|| format!("parsing {}", trace.display()))?;
    let events = events_from_frames(&frames, chart, config.sensing.threshold, config.sensing.debounce_ms)?;
    let mut session = TutorSession::new(score, chart, mode, config.tutor)?;
    session.run_to_completion(&events, config.link.tick_ms)?;
    let mut text = log_to_text(session.log());
    text.push_str(&format!("mistakes {}\n", session.mistake_count()));
    emit(out, &text)
}

fn experiment(
    config: &EngineConfig,
    participants: Option<usize>,
    seeds: usize,
    seed: u64,
    out: &Path,
    serial: bool,
) -> Result<()> {
    let mut plan = config.plan;
    if let Some(n) = participants {
        plan.participants = n;
    }
    let started = Instant::now();
    let report = run_protocol(&plan, &config.population, &SongPair::bundled(), &seed_list(seed, seeds), !serial)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("report.txt"), report.to_text())?;
    fs::write(out.join("raw.log"), report.raw_log_text())?;
    let mut table = report.table_text();
    fs::write(out.join("table.txt"), &table)?;
    let d = report.direction();
    writeln!(
        table,
        "seeds={} rate_wins={} forgetting_wins={} forgetting_losses={} sign_p={:.6}",
        d.seeds, d.rate_wins, d.forgetting_wins, d.forgetting_losses, d.forgetting_sign_p
    )?;
    emit(None, &table)?;
    eprintln!("wrote {} in {:.2}s", out.display(), started.elapsed().as_secs_f64());
    Ok(())
}

fn table(raw: &Path) -> Result<()> {
    let by_seed = summaries_from_raw(&read(raw)?)?;
    let mut out = String::new();
    writeln!(
        out,
        "{:<10} {:<8} {:>7} {:>9} {:>14} {:>17} {:>16}",
        "seed", "method", "trials", "finishers", "rate (%/min)", "forgetting chance", "forgetting ratio"
    )?;
    let f = |v: Option<f64>| v.map_or("na".to_string(), |x| format!("{x:.6}"));
    for (seed, summaries) in &by_seed {
        for s in summaries {
            writeln!(
                out,
                "{:<10} {:<8} {:>7} {:>9} {:>14} {:>17} {:>16}",
                seed,
                s.method.as_str(),
                s.trials,
                s.finishers,
                f(s.mean_rate),
                f(s.forgetting_chance),
                f(s.mean_forgetting_ratio)
            )?;
        }
    }
    emit(None, &out)
}

/// Score and strategy come from the request query, e.g. `/?score=b&strategy=static`.
fn session_params(query: Option<&str>) -> Result<(String, StrategyKind), String> {
    let mut score = "a".to_string();
    let mut strategy = StrategyKind::Dynamic;
    for pair in query.unwrap_or("").split('&').filter(|p| !p.is_empty()) {
        match pair.split_once('=') {
            Some(("score", v)) => score = v.to_string(),
            Some(("strategy", v)) => strategy = v.parse()?,
            _ => return Err(format!("unknown query parameter '{pair}'")),
        }
    }
    Ok((score, strategy))
}

async fn serve(config: EngineConfig, host: String, port: u16, record: Option<PathBuf>) -> Result<()> {
    let listener = TcpListener::bind((host.as_str(), port)).await?;
    println!("listening on ws://{}", listener.local_addr()?);
    let ids = Arc::new(AtomicU64::new(1));
    let library = Arc::new(ScoreLibrary::bundled());
    loop {
        let (stream, peer) = listener.accept().await?;
        let id = ids.fetch_add(1, Ordering::Relaxed);
        let (library, record) = (library.clone(), record.clone());
        tokio::spawn(async move {
            if let Err(e) = connection(stream, id, config, &library, record.as_deref()).await {
                eprintln!("session {id} ({peer}): {e:#}");
            }
        });
    }
}

// The handshake callback's error type is fixed by tungstenite.
#[allow(clippy::result_large_err)]
async fn connection(
    stream: TcpStream,
    id: u64,
    config: EngineConfig,
    library: &ScoreLibrary,
    record: Option<&Path>,
) -> Result<()> {
    let mut query = None;
    let ws = tokio_tungstenite::accept_hdr_async(stream, |req: &Request, resp: Response| {
        query = req.uri().query().map(str::to_string);
        Ok(resp)
    })
    .await?;
    let (mut tx, mut rx) = ws.split();
    let (score, strategy) = match session_params(query.as_deref()) {
        Ok(p) => p,
        Err(reason) => {
            let msg = serde_json::json!({"v": 1, "t": 0, "cause": "in:0", "type": "rejected", "reason": reason});
            tx.send(Message::text(msg.to_string())).await?;
            return Ok(());
        }
    };
    let mut session = create_session(library, id, &score, strategy, &config)?;
    let started = Instant::now();
    let now = || started.elapsed().as_millis() as u64;
    let mut ticker = tokio::time::interval(std::time::Duration::from_millis(config.link.tick_ms.max(1)));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);

    let mut send = session.pump_lines(&[r#"{"v":1,"type":"hello"}"#.to_string()], 0)?;
    loop {
        for m in send.drain(..) {
            tx.send(Message::text(m.to_line())).await?;
        }
        if session.state() == SessionState::Done {
            tx.send(Message::Close(None)).await?;
            break;
        }
        tokio::select! {
            msg = rx.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let lines: Vec<String> = text.lines().map(str::to_string).collect();
                    send = session.pump_lines(&lines, now())?;
                }
                Some(Ok(Message::Close(_))) | None => break,
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(e.into()),
            },
            _ = ticker.tick() => {
                send = session.pump_lines(&[], now())?;
            }
        }
    }
    if let Some(dir) = record {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("session-{id}.rec")), session.recording_text())?;
    }
    Ok(())
}
