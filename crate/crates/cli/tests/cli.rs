use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use rtcshim_core::sdp::canonicalize_line_endings;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rtcshim"));
    c.env_remove("RTCSHIM_ADMIN_ADDR").env_remove("RTCSHIM_PROXY_ADDR").env_remove("RTCSHIM_SEED");
    c
}

fn run_with_stdin(args: &[&str], stdin: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus(name: &str) -> String {
    std::fs::read_to_string(repo().join("crates/core/tests/corpus").join(name)).unwrap()
}

#[test]
fn munge_reproduces_golden_rewrites() {
    let cases: &[(&str, &str, &[&str])] = &[
        ("chrome_av_offer", "prefer_audio_pcmu", &["prefer_codec", "kind=audio", "codec=PCMU"]),
        ("firefox_av_offer", "prefer_video_h264", &["prefer_codec", "kind=video", "codec=H264"]),
        ("sip_audio_video_plain", "video_bandwidth_256", &["receiver_bandwidth", "kind=video", "kbps=256"]),
        ("opus_no_fmtp", "opus_stereo_0", &["fmtp_param", "codec=opus", "key=stereo", "value=0"]),
        ("chrome_av_offer", "remove_nack", &["feedback", "action=remove_nack"]),
        ("flexfec_offer", "remove_fec", &["feedback", "action=remove_fec"]),
    ];
    for (doc, op, args) in cases {
        let mut argv = vec!["munge"];
        argv.extend_from_slice(args);
        let out = run_with_stdin(&argv, &corpus(&format!("{doc}.sdp")));
        assert!(out.status.success(), "{doc}/{op}: {}", String::from_utf8_lossy(&out.stderr));
        let expected = canonicalize_line_endings(&corpus(&format!("golden/{doc}.{op}.expected")));
        assert_eq!(String::from_utf8(out.stdout).unwrap(), expected, "{doc}/{op}");
    }
}

#[test]
fn munge_exit_codes() {
    let offer = corpus("chrome_av_offer.sdp");
    assert_eq!(run_with_stdin(&["munge", "no_such_rewrite"], &offer).status.code(), Some(2));
    assert_eq!(run_with_stdin(&["munge", "prefer_codec", "kind"], &offer).status.code(), Some(2));
    assert_eq!(
        run_with_stdin(&["munge", "prefer_codec", "kind=audio", "codec=PCMU"], "not sdp\n").status.code(),
        Some(2)
    );
    let answer = corpus("chrome_av_answer.sdp");
    let out = run_with_stdin(&["munge", "prefer_codec", "kind=audio", "codec=opus", "--answer"], &answer);
    assert!(out.status.success());
}

#[test]
fn catalog_lists_session_builtins() {
    let out = bin().args(["catalog", "Session"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["prefer_codec", "media_policy", "receiver_bandwidth", "fmtp_param", "feedback"] {
        assert!(text.contains(&format!("Session/{name}")), "{name} missing:\n{text}");
    }
    assert!(!text.contains("Network/"));
    assert_eq!(bin().args(["catalog", "Nope"]).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn validate_reports_config_errors() {
    let good = repo().join("config/rtcshim.json");
    let out = bin().arg("validate").arg(&good).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"categories": {"Session": {"builtin": "prefer_codec", "params": {"kind": "text"}}}}"#).unwrap();
    let out = bin().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("categories.Session"));

    std::fs::write(&bad, r#"{"unknown_section": 1}"#).unwrap();
    assert_eq!(bin().arg("validate").arg(&bad).output().unwrap().status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(bin().arg("validate").arg(&missing).output().unwrap().status.code(), Some(2));
    let out = bin().arg("validate").arg(&good).env("RTCSHIM_SEED", "many").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn scenario_run_writes_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = repo().join("scenarios/host_filter_caveat.json");
    let out = bin().current_dir(dir.path()).args(["scenario", "run"]).arg(&scenario).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(printed.trim(), "host_filter_caveat.transcript.ndjson");
    let text = std::fs::read_to_string(dir.path().join(printed.trim())).unwrap();
    let events: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let connected = events.iter().find(|e| e["event"] == "connected").unwrap();
    assert!(connected["detail"]["local"].as_str().unwrap().ends_with("typ host"));
    let signaled: Vec<&serde_json::Value> = events.iter().filter(|e| e["event"] == "signal").collect();
    assert!(!signaled.is_empty());
    assert!(signaled.iter().all(|e| !e.to_string().contains("typ host")));

    let broken = dir.path().join("broken.json");
    std::fs::write(
        &broken,
        r#"{"name": "broken", "endpoints": [{"id": "a"}],
            "steps": [{"at_ms": 0, "action": "answer", "params": {"endpoint": "ghost"}}]}"#,
    )
    .unwrap();
    let out_path = dir.path().join("custom.ndjson");
    let out = bin().args(["scenario", "run"]).arg(&broken).arg("--out").arg(&out_path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(std::fs::read_to_string(&out_path).unwrap().contains("\"error\""));

    std::fs::write(&broken, "{").unwrap();
    assert_eq!(bin().args(["scenario", "run"]).arg(&broken).output().unwrap().status.code(), Some(2));
}

#[test]
fn stats_prints_windows_with_mos() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("reports.ndjson");
    let mut lines = Vec::new();
    for i in 1..=3u64 {
        let t = i * 1000;
        let sent = (i - 1) as f64 * 125_000.0;
        lines.push(serde_json::json!({
            "session_id": "s", "taken_at_ms": t,
            "entries": {
                "out": {"id": "out", "type": "outbound-rtp", "timestamp_ms": t, "fields": {"bytesSent": sent, "packetsSent": sent / 1000.0}},
                "in": {"id": "in", "type": "inbound-rtp", "timestamp_ms": t,
                       "fields": {"bytesReceived": sent, "packetsReceived": sent / 1000.0, "packetsLost": 0, "jitter": 0}},
                "cp": {"id": "cp", "type": "candidate-pair", "timestamp_ms": t, "fields": {"currentRoundTripTime": 0}}
            }
        }).to_string());
    }
    std::fs::write(&file, lines.join("\n")).unwrap();
    let out = bin().arg("stats").arg(&file).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let mos: f64 = row.rsplit('\t').next().unwrap().parse().unwrap();
        assert!((mos - 4.404).abs() <= 0.005, "{row}");
    }

    std::fs::write(&file, "[{\"session_id\": 3}]").unwrap();
    assert_eq!(bin().arg("stats").arg(&file).output().unwrap().status.code(), Some(2));
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn run_serves_the_admin_api_until_killed() {
    let port = free_port();
    let mut child = bin()
        .arg("run")
        .env("RTCSHIM_ADMIN_ADDR", format!("127.0.0.1:{port}"))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let client = reqwest::blocking::Client::new();
    let url = format!("http://127.0.0.1:{port}/api/catalog?category=Cpu");
    let deadline = Instant::now() + Duration::from_secs(10);
    let body = loop {
        match client.get(&url).send() {
            Ok(resp) => break resp.text().unwrap(),
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => {
                child.kill().ok();
                panic!("admin API never came up: {e}");
            }
        }
    };
    child.kill().unwrap();
    child.wait().unwrap();
    let entries: Vec<serde_json::Value> = serde_json::from_str(&body).unwrap();
    assert!(entries.iter().any(|e| e["name"] == "cpu_threshold"));
}
