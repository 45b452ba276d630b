use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_facilitator"));
    cmd.env("RUST_LOG", "warn")
        .env_remove("DIPLOMAT_PORT")
        .env_remove("DIPLOMAT_DATA_DIR");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

struct Service {
    child: Child,
    base: String,
}

impl Service {
    fn start(data_dir: &Path) -> Self {
        Self::start_with(
            bin()
                .args(["serve", "--port", "0", "--data-dir"])
                .arg(data_dir),
        )
    }

    fn start_with(cmd: &mut Command) -> Self {
        let mut child = cmd
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let v: Value = serde_json::from_str(&line).unwrap();
        Service {
            child,
            base: format!("http://{}", v["listening"].as_str().unwrap()),
        }
    }

    fn port(&self) -> u16 {
        self.base.rsplit(':').next().unwrap().parse().unwrap()
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        interrupt(&self.child);
        let _ = self.child.wait();
    }
}

fn interrupt(child: &Child) {
    Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
}

fn http() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn post(url: &str, body: Value) -> u16 {
    http().post(url).send_json(body).unwrap().status().as_u16()
}

fn get(url: &str) -> Value {
    http()
        .get(url)
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn help_and_version() {
    let v = run(&["--version"]);
    assert!(v.status.success());
    assert!(stdout(&v).starts_with("facilitator "));
    for sub in ["serve", "run", "replay", "report"] {
        let h = run(&[sub, "--help"]);
        assert!(h.status.success(), "{sub}");
        assert!(stdout(&h).contains("Usage"), "{sub}");
    }
}

#[test]
fn replay_matches_golden_log() {
    let golden = std::fs::read_to_string(fixture("study_session.golden.ndjson")).unwrap();
    let args = |config: &str| {
        run(&[
            "replay",
            "--config",
            fixture(config).to_str().unwrap(),
            "--script",
            fixture("study_session.ndjson").to_str().unwrap(),
            "--poll-seconds",
            "2",
        ])
    };
    let first = args("combined.json");
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(stdout(&first), golden);
    assert_eq!(args("combined.json").stdout, first.stdout);
    let summary: Value = serde_json::from_str(stderr(&first).trim()).unwrap();
    assert_eq!(summary["cycles"], 600);

    let control = args("control.json");
    assert!(control.status.success());
    assert!(control.stdout.is_empty());
}

#[test]
fn replay_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(
        dir.path(),
        "s.ndjson",
        "{\"at_ms\":0,\"author\":\"a\",\"body\":\"x\"}\n{\"at_ms\":",
    );
    let o = run(&[
        "replay",
        "--config",
        fixture("combined.json").to_str().unwrap(),
        "--script",
        script.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = run(&[
        "replay",
        "--config",
        "/nonexistent.json",
        "--script",
        fixture("study_session.ndjson").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let bad = write(
        dir.path(),
        "c.json",
        r#"{"agent_author":"bot","features":{"timing":{"warnings_min":[2,5]}}}"#,
    );
    let o = run(&[
        "replay",
        "--config",
        bad.to_str().unwrap(),
        "--script",
        fixture("study_session.ndjson").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = run(&[
        "replay",
        "--config",
        fixture("combined.json").to_str().unwrap(),
        "--script",
        fixture("study_session.ndjson").to_str().unwrap(),
        "--poll-seconds",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn report_on_fixture() {
    let o = run(&[
        "report",
        "--transcript",
        fixture("report_fixture.ndjson").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["underspeak_response_rate"], json!(2.0 / 3.0));
    assert_eq!(r["overspeak_response_rate"], json!(0.5));
    assert!(stderr(&o).contains("underspeak response rate      0.667"));
}

#[test]
fn report_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.ndjson", "");
    let o = run(&["report", "--transcript", empty.to_str().unwrap()]);
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["underspeak_response_rate"], Value::Null);
    assert_eq!(r["overspeak_response_rate"], Value::Null);
    assert_eq!(r["human_messages"], 0);

    let text = std::fs::read_to_string(fixture("report_fixture.ndjson")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{not json";
    let broken = write(dir.path(), "broken.ndjson", &lines.join("\n"));
    let o = run(&["report", "--transcript", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stderr(&o).contains("broken.ndjson:3:"), "{}", stderr(&o));

    let o = run(&["report", "--transcript", "/nonexistent.ndjson"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn serve_lists_rooms_and_recovers_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let s = Service::start(dir.path());
        assert_eq!(get(&format!("{}/rooms", s.base)), json!([]));
        assert_eq!(
            post(&format!("{}/rooms", s.base), json!({"room_id": "g1"})),
            201
        );
    }
    let s = Service::start(dir.path());
    assert_eq!(get(&format!("{}/rooms", s.base)), json!(["g1"]));
}

#[test]
fn serve_reads_environment() {
    let dir = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let s = Service::start_with(
        bin()
            .arg("serve")
            .env("DIPLOMAT_PORT", port.to_string())
            .env("DIPLOMAT_DATA_DIR", dir.path()),
    );
    assert_eq!(s.port(), port);
    post(&format!("{}/rooms", s.base), json!({"room_id": "g1"}));
    assert!(dir.path().join("rooms/g1/messages.ndjson").exists());
}

#[test]
fn serve_environment_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let s = Service::start(dir.path());
    let other = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["serve", "--port", &s.port().to_string(), "--data-dir"])
        .arg(other.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let file = write(other.path(), "not-a-dir", "");
    let o = bin()
        .args(["serve", "--port", "0", "--data-dir"])
        .arg(&file)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let control = fixture("control.json");
    let o = run(&["run", "--config", "/nonexistent.json", "--room", "g1"]);
    assert_eq!(o.status.code(), Some(3));

    let closed = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let o = run(&[
        "run",
        "--config",
        control.to_str().unwrap(),
        "--room",
        "g1",
        "--service",
        &format!("http://{closed}"),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let s = Service::start(dir.path());
    let o = run(&[
        "run",
        "--config",
        control.to_str().unwrap(),
        "--room",
        "nope",
        "--service",
        &s.base,
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

/// Starts `run` in the background, waits for `until`, then interrupts it and
/// returns its summary.
fn run_agent_until(config: &Path, service: &Service, until: impl Fn() -> bool) -> Value {
    let child = bin()
        .args([
            "run",
            "--room",
            "g1",
            "--poll-seconds",
            "0.1",
            "--service",
            &service.base,
            "--config",
        ])
        .arg(config)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    while !until() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(50));
    }
    interrupt(&child);
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    serde_json::from_str(&stdout(&out)).unwrap()
}

fn seed_room(s: &Service) {
    post(
        &format!("{}/rooms", s.base),
        json!({"room_id": "g1", "agent_author": "bot"}),
    );
    for who in ["ana", "ben", "eli"] {
        post(
            &format!("{}/rooms/g1/join", s.base),
            json!({"author": who, "display_name": who}),
        );
    }
    post(
        &format!("{}/rooms/g1/messages", s.base),
        json!({"author": "eli", "body": "hi", "origin": "human"}),
    );
    for i in 0..8 {
        let who = ["ana", "ben"][i % 2];
        post(
            &format!("{}/rooms/g1/messages", s.base),
            json!({"author": who, "body": format!("m{i}"), "origin": "human"}),
        );
    }
}

#[test]
fn run_combined_agent_posts_to_live_room() {
    let dir = tempfile::tempdir().unwrap();
    let s = Service::start(dir.path());
    seed_room(&s);
    let config = write(
        dir.path(),
        "agent.json",
        &json!({
            "agent_author": "bot",
            "features": {
                "information": {"lull_seconds": 1, "links": [{"url": "https://example.org/x", "note": "x"}]},
                "underspeaking": {"window": 8},
                "overspeaking": {"window": 8, "share_threshold": 0.5}
            }
        })
        .to_string(),
    );
    let messages = format!("{}/rooms/g1/messages?after_seq=-1", s.base);
    let tags = || -> Vec<String> {
        get(&messages)
            .as_array()
            .unwrap()
            .iter()
            .filter(|m| m["origin"] == "agent")
            .map(|m| m["idempotency_key"].as_str().unwrap().to_string())
            .collect()
    };
    let summary = run_agent_until(&config, &s, || tags().len() >= 2);
    assert_eq!(tags(), ["underspeaking:eli:0", "information:0"]);
    assert_eq!(summary["posted"], 2);
}

#[test]
fn run_control_agent_posts_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let s = Service::start(dir.path());
    seed_room(&s);
    let config = write(
        dir.path(),
        "control.json",
        r#"{"agent_author":"bot","features":{}}"#,
    );
    let started = Instant::now();
    let summary = run_agent_until(&config, &s, || {
        started.elapsed() > Duration::from_millis(800)
    });
    assert_eq!(summary["posted"], 0);
    assert!(summary["cycles"].as_u64().unwrap() >= 2);
}
