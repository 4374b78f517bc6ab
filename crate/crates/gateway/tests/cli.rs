use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsm-gateway"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

#[test]
fn headless_run_writes_log_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.log");
    let csv = dir.path().join("metrics.csv");
    let out = bin()
        .args(["run", "--scenario"])
        .arg(scenario("demo.scn"))
        .args([
            "--seed",
            "7",
            "--duration-ms",
            "60000",
            "--headless",
            "--log-out",
        ])
        .arg(&log)
        .arg("--metrics-out")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let log = std::fs::read_to_string(log).unwrap();
    assert_eq!(
        log.lines()
            .filter(|l| l.contains("| dsm | REGISTER |"))
            .count(),
        2
    );
    assert!(log
        .lines()
        .any(|l| l.contains("| snc | APPLIED | SN-1 v2 [3700,3740]")));
    let csv = std::fs::read_to_string(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("t,subnet,width_mhz,throughput_mbps,p50_us,p99_us,jitter_us,miss_ratio,dropped")
    );
    assert_eq!(lines.count(), 120);
}

#[test]
fn headless_runs_are_reproducible() {
    let run = || {
        let out = bin()
            .args(["run", "--scenario"])
            .arg(scenario("onoff.scn"))
            .arg("--headless")
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        out.stdout
    };
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());
}

#[test]
fn seed_flag_overrides_the_scenario() {
    let ids = |seed: &str| {
        let out = bin()
            .args(["run", "--scenario"])
            .arg(scenario("demo.scn"))
            .args(["--duration-ms", "3000", "--seed", seed])
            .output()
            .unwrap();
        String::from_utf8(out.stdout).unwrap()
    };
    assert_ne!(ids("1"), ids("2"));
}

#[test]
fn missing_scenario_names_the_file() {
    let out = bin()
        .args(["run", "--scenario", "missing.scn"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.scn"));
}

#[test]
fn invalid_scenario_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.scn");
    std::fs::write(
        &path,
        "seed = 1\nduration_ms = 10\nsm_host = 5\nnodes = 2\n",
    )
    .unwrap();
    let out = bin()
        .args(["run", "--scenario"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.scn"));
}

#[test]
fn unknown_flag_prints_usage() {
    let out = bin()
        .args(["run", "--scenario", "x.scn", "--frobnicate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn headless_and_serve_are_exclusive() {
    let out = bin()
        .args([
            "run",
            "--scenario",
            "x.scn",
            "--headless",
            "--serve",
            "127.0.0.1:0",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn serve_mode_answers_until_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.log");
    let mut child = bin()
        .args(["run", "--scenario"])
        .arg(scenario("demo.scn"))
        .args([
            "--duration-ms",
            "5000",
            "--serve",
            "127.0.0.1:0",
            "--log-out",
        ])
        .arg(&log)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_string();

    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let http = reqwest::Client::new();
        // The run is not paced, so it reaches its end almost immediately.
        let mut state: serde_json::Value = serde_json::Value::Null;
        for _ in 0..100 {
            state = http
                .get(format!("{base}/api/state"))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            if state["t"] == 5000 {
                break;
            }
            tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        }
        assert_eq!(state["t"], 5000);
        let index = http
            .get(format!("{base}/"))
            .send()
            .await
            .unwrap()
            .text()
            .await
            .unwrap();
        assert!(index.contains("/api/state"));
        let late = http
            .post(format!("{base}/api/command"))
            .json(&serde_json::json!({"kind": "subnet_power", "subnet": 2, "on": false}))
            .send()
            .await
            .unwrap();
        assert_eq!(late.status(), 409);
        let bye = http
            .post(format!("{base}/api/command"))
            .json(&serde_json::json!({"kind": "shutdown"}))
            .send()
            .await
            .unwrap();
        assert_eq!(bye.status(), 200);
    });
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(std::fs::read_to_string(log)
        .unwrap()
        .contains("| dsm | REGISTER |"));
}
