use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use reqwest::{Client, StatusCode};
use rtcshim::{EngineConfig, Service};
use serde_json::{json, Value};

async fn spawn(config: &str) -> (String, Arc<Service>) {
    let service = Service::build(EngineConfig::from_json(config).unwrap()).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let app = rtcshim::admin::router(service.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), service)
}

async fn body(resp: reqwest::Response) -> Value {
    serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap()
}

#[tokio::test]
async fn token_guards_every_route() {
    let (base, _) = spawn(r#"{"admin": {"token": "s3cret"}}"#).await;
    let c = Client::new();
    for path in ["/api/catalog", "/api/controls", "/api/settings", "/panel"] {
        let resp = c.get(format!("{base}{path}")).send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::UNAUTHORIZED, "{path}");
        assert_eq!(resp.headers()["www-authenticate"], "Bearer");
    }
    let wrong = c.get(format!("{base}/api/catalog")).bearer_auth("nope").send().await.unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    let ok = c.get(format!("{base}/api/catalog")).bearer_auth("s3cret").send().await.unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    let query = c.get(format!("{base}/api/controls?access_token=s3cret")).send().await.unwrap();
    assert_eq!(query.status(), StatusCode::OK);
}

#[tokio::test]
async fn categories_install_through_the_config_path() {
    let (base, svc) = spawn("{}").await;
    let c = Client::new();
    let url = format!("{base}/api/categories/session");
    let bad = c
        .put(&url)
        .json(&json!({"builtin": "prefer_codec", "params": {"kind": "text", "codec": "H264"}}))
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    assert!(body(bad).await["error"].as_str().unwrap().contains("kind"));
    let unknown_field = c.put(&url).json(&json!({"builtin": "prefer_codec", "bogus": 1})).send().await.unwrap();
    assert!(unknown_field.status().is_client_error());
    assert!(svc.engine.active(rtcshim_core::CategoryId::Session).is_none());

    let ok = c
        .put(&url)
        .json(&json!({"builtin": "prefer_codec", "params": {"kind": "video", "codec": "H264"}}))
        .send()
        .await
        .unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    let doc = body(c.get(&url).send().await.unwrap()).await;
    assert_eq!(doc["category"], "Session");
    assert_eq!(doc["active"]["spec"]["builtin"], "prefer_codec");
    assert_eq!(doc["active"]["spec"]["params"]["codec"], "H264");

    let scenario = json!({
        "name": "panel-call",
        "endpoints": [{"id": "alice"}, {"id": "bob"}],
        "steps": [
            {"at_ms": 0, "action": "call", "params": {"from": "alice", "to": "bob", "complete": true}},
            {"at_ms": 3000, "action": "hangup", "params": {"endpoint": "alice"}}
        ]
    });
    let run = body(c.post(format!("{base}/api/scenarios/run")).json(&scenario).send().await.unwrap()).await;
    assert_eq!(run["error"], Value::Null);
    let negotiated = run["transcript"].as_array().unwrap().iter().find(|e| e["event"] == "negotiated").unwrap();
    assert_eq!(negotiated["detail"]["codecs"]["video"], "H264");

    let link = run["link_session"].as_str().unwrap();
    let messages = body(c.get(format!("{base}/api/sessions/{link}/messages")).send().await.unwrap()).await;
    assert!(messages["records"].as_array().unwrap().len() >= 4);
    let sessions = body(c.get(format!("{base}/api/sessions")).send().await.unwrap()).await;
    assert_eq!(sessions["stats"], json!(["run-1:alice"]));
    let series = body(
        c.get(format!("{base}/api/sessions/run-1:alice/stats?metric=rtt_ms&from=0"))
            .send()
            .await
            .unwrap(),
    )
    .await;
    assert_eq!(series[0]["name"], "rtt_ms");
    assert!(!series[0]["points"].as_array().unwrap().is_empty());
    let missing = c.get(format!("{base}/api/sessions/run-7:alice/stats")).send().await.unwrap();
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);

    let removed = body(c.delete(&url).send().await.unwrap()).await;
    assert_eq!(removed["removed"], true);
    let run = body(c.post(format!("{base}/api/scenarios/run")).json(&scenario).send().await.unwrap()).await;
    let negotiated = run["transcript"].as_array().unwrap().iter().find(|e| e["event"] == "negotiated").unwrap();
    assert_eq!(negotiated["detail"]["codecs"]["video"], "VP8");

    let invalid = c.post(format!("{base}/api/scenarios/run")).json(&json!({"steps": 1})).send().await.unwrap();
    assert_eq!(invalid.status(), StatusCode::BAD_REQUEST);
    let nowhere = c.get(format!("{base}/api/categories/teleport")).send().await.unwrap();
    assert_eq!(nowhere.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn controls_stream_sees_every_write() {
    let (base, _) = spawn(r#"{"controls_initial": {"cpu.load": 10}}"#).await;
    let c = Client::new();
    let mut stream = c.get(format!("{base}/api/controls/stream?pattern=cpu.*")).send().await.unwrap();
    assert_eq!(stream.status(), StatusCode::OK);
    assert!(stream.headers()["content-type"].to_str().unwrap().starts_with("text/event-stream"));
    tokio::time::sleep(Duration::from_millis(50)).await;

    for v in [20, 30, 40] {
        let put = c.put(format!("{base}/api/controls/cpu.load")).json(&json!(v)).send().await.unwrap();
        assert_eq!(put.status(), StatusCode::OK);
    }
    c.put(format!("{base}/api/controls/other")).json(&json!("x")).send().await.unwrap();
    let trig = body(c.post(format!("{base}/api/controls/cpu.spike/trigger")).send().await.unwrap()).await;
    assert_eq!(trig["delivered"], 1);

    let mut text = String::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while text.matches("event: control").count() < 4 {
        let chunk = tokio::time::timeout_at(deadline, stream.chunk()).await.unwrap().unwrap().unwrap();
        text.push_str(std::str::from_utf8(&chunk).unwrap());
    }
    let events: Vec<Value> = text
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|d| serde_json::from_str(d).unwrap())
        .collect();
    let versions: Vec<u64> = events[..3].iter().map(|e| e["version"].as_u64().unwrap()).collect();
    assert!(versions.windows(2).all(|w| w[0] < w[1]), "{versions:?}");
    assert_eq!(events[2]["new_value"], 40.0);
    assert_eq!(events[3]["name"], "cpu.spike");
    assert!(events.iter().all(|e| e["name"] != "other"));

    let entry = body(c.get(format!("{base}/api/controls/cpu.load")).send().await.unwrap()).await;
    assert_eq!(entry["value"], 40.0);
    assert_eq!(c.delete(format!("{base}/api/controls/cpu.load")).send().await.unwrap().status(), StatusCode::OK);
    assert_eq!(
        c.get(format!("{base}/api/controls/cpu.load")).send().await.unwrap().status(),
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn settings_round_trip() {
    let (base, _) = spawn(r#"{"categories": {"Socket": {"builtin": "block_socket"}}}"#).await;
    let c = Client::new();
    let mut settings = body(c.get(format!("{base}/api/settings")).send().await.unwrap()).await;
    assert_eq!(settings["strict"], false);
    settings["strict"] = json!(true);
    let put = body(c.put(format!("{base}/api/settings")).json(&settings).send().await.unwrap()).await;
    assert_eq!(put["settings"]["strict"], true);
    let bad = c
        .put(format!("{base}/api/settings"))
        .json(&json!({"stats_interval_ms": 1}))
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    let no_proxy = c.get(format!("{base}/api/proxy/fault")).send().await.unwrap();
    assert_eq!(no_proxy.status(), StatusCode::NOT_FOUND);
    let panel = c.get(format!("{base}/panel")).send().await.unwrap();
    assert_eq!(panel.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn panel_assets_are_served_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>panel</html>").unwrap();
    let config = json!({"admin": {"panel_dir": dir.path()}}).to_string();
    let (base, _) = spawn(&config).await;
    let resp = reqwest::get(format!("{base}/panel/")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.text().await.unwrap(), "<html>panel</html>");
}
