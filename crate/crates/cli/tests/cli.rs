use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command as Proc, Stdio};
use std::time::{Duration, Instant};

use assert_cmd::Command;
use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

fn haptutor() -> Command {
    Command::cargo_bin("haptutor").unwrap()
}

fn stdout_of(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn experiment_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, serial: bool| {
        let out = dir.path().join(name);
        let mut cmd = haptutor();
        cmd.args(["experiment", "--participants", "16", "--seeds", "20", "--seed", "7", "--out"])
            .arg(&out);
        if serial {
            cmd.arg("--serial");
        }
        stdout_of(&mut cmd);
        (
            std::fs::read(out.join("report.txt")).unwrap(),
            std::fs::read(out.join("raw.log")).unwrap(),
        )
    };
    let first = run("one", false);
    assert_eq!(first, run("two", false));
    assert_eq!(first, run("serial", true));
    let report = String::from_utf8(first.0).unwrap();
    assert!(report.contains("condition seed=7 method=dynamic"));
    assert!(report.contains("condition seed=7 method=static"));

    let table = stdout_of(haptutor().arg("table").arg(dir.path().join("one/raw.log")));
    assert_eq!(table.lines().count(), 1 + 20 * 2);
}

#[test]
fn replay_perfect_trace_has_no_mistakes() {
    let out = stdout_of(haptutor().args([
        "replay",
        "--score",
        &data("song_a.score"),
        "--trace",
        &data("song_a_perfect.trace"),
        "--mode",
        "adaptive",
    ]));
    assert!(out.ends_with("mistakes 0\n"));
    assert!(!out.contains("mistake note="));
}

#[test]
fn synth_trace_matches_bundled_file() {
    let out = stdout_of(haptutor().args(["synth", "--score", "a"]));
    assert_eq!(out, std::fs::read_to_string(data("song_a_perfect.trace")).unwrap());
}

#[test]
fn oracle_agrees() {
    let out = stdout_of(haptutor().args(["oracle", "--cases", "500"]));
    assert_eq!(out, "agreement 500/500\n");
}

#[test]
fn frames_hex_dump() {
    let out = stdout_of(
        haptutor()
            .args(["frames", "--hex"])
            .write_stdin("7E 00 05 04 03 02 00 3C 39 AA"),
    );
    assert!(out.starts_with("Command seq=5 len=4 crc=39AA finger=3 target=down pulse=60"));
    assert!(out.ends_with("frames=1 errors=0 discarded=0\n"));
}

#[test]
fn bad_input_fails_with_message() {
    let out = haptutor().args(["replay", "--score", "a", "--trace", "/no/such/file"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/file"));

    let out = haptutor().args(["experiment", "--participants", "lots"]).output().unwrap();
    assert!(!out.status.success());

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[tutor]\ndelta_t_ms = 0\n").unwrap();
    let out = haptutor().arg("--config").arg(&cfg).args(["oracle", "--cases", "1"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn served_session_replays_bytewise() {
    let rec = tempfile::tempdir().unwrap();
    let mut server = Proc::new(env!("CARGO_BIN_EXE_haptutor"))
        .args(["serve", "--port", "0", "--record"])
        .arg(rec.path())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let received = tokio::runtime::Runtime::new().unwrap().block_on(async {
        let (mut ws, _) = tokio_tungstenite::connect_async(format!("{url}/?score=b&strategy=static"))
            .await
            .unwrap();
        let mut got = Vec::new();
        ws.send(Message::text(r#"{"v":1,"type":"start"}"#)).await.unwrap();
        for i in 0..20 {
            let closed = i % 2 == 0;
            let v = if closed { 1.0 } else { 0.0 };
            let frame = format!(r#"{{"v":1,"type":"frame","values":[{v},{v},1,0,0,0]}}"#);
            ws.send(Message::text(frame)).await.unwrap();
            tokio::time::sleep(Duration::from_millis(15)).await;
        }
        ws.send(Message::text(r#"{"v":1,"type":"stop"}"#)).await.unwrap();
        let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
        while let Ok(Some(Ok(msg))) = tokio::time::timeout_at(deadline, ws.next()).await {
            if let Message::Text(t) = msg {
                got.push(t.to_string());
            }
        }
        got
    });
    assert!(received[0].contains(r#""type":"session""#));
    assert!(received.iter().any(|l| l.contains(r#""type":"onset_cue""#)));
    assert!(received.iter().any(|l| l.contains(r#""type":"state","state":"done""#)));

    let path = rec.path().join("session-1.rec");
    let start = Instant::now();
    while !path.exists() && start.elapsed() < Duration::from_secs(5) {
        std::thread::sleep(Duration::from_millis(20));
    }
    server.kill().unwrap();
    server.wait().unwrap();
    let replayed = stdout_of(haptutor().arg("replay").arg("--recording").arg(&path));
    let replayed: Vec<&str> = replayed.lines().collect();
    assert_eq!(replayed.len(), received.len());
    assert_eq!(replayed, received);
}
