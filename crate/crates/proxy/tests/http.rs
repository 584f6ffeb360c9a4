mod common;

use std::sync::atomic::Ordering;

use common::*;
use rtcshim_core::{CategoryId, TransformSpec};
use rtcshim_proxy::{HeaderDirection, HeaderRule, ProxyConfig, TlsPaths};
use serde_json::Value;

async fn echo(resp: reqwest::Response) -> Value {
    serde_json::from_slice(&resp.bytes().await.unwrap()).unwrap()
}

#[tokio::test]
async fn plain_request_passes_through() {
    let (up_addr, up) = spawn_upstream().await;
    let (proxy_addr, proxy) = spawn_proxy(seeded_engine(1), ProxyConfig::new(&format!("http://{up_addr}"))).await;
    let resp = reqwest::Client::new()
        .post(format!("http://{proxy_addr}/api/offer?room=7"))
        .header("x-test", "abc")
        .body("v=0")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["x-upstream"], "yes");
    assert_eq!(resp.headers()["content-security-policy"], "default-src 'self'");
    let doc = echo(resp).await;
    assert_eq!(doc["method"], "POST");
    assert_eq!(doc["uri"], "/api/offer?room=7");
    assert_eq!(doc["body"], "v=0");
    assert_eq!(doc["headers"]["x-test"], "abc");
    assert_eq!(up.http_hits.load(Ordering::SeqCst), 1);

    let s = proxy.registry().session("http-1").unwrap();
    assert_eq!((s.counters.msgs_c2s, s.counters.msgs_s2c), (1, 1));
    assert_eq!(s.close_reason.as_deref(), Some("complete"));
}

#[tokio::test]
async fn correlation_id_spans_request_and_response() {
    let (up_addr, _) = spawn_upstream().await;
    let engine = seeded_engine(1);
    engine
        .install_transform(CategoryId::Request, TransformSpec::new(CategoryId::Request, "correlate"))
        .unwrap();
    let (proxy_addr, _) = spawn_proxy(engine, ProxyConfig::new(&format!("http://{up_addr}"))).await;
    let client = reqwest::Client::new();
    for n in 1..=2 {
        let resp = client.get(format!("http://{proxy_addr}/x")).send().await.unwrap();
        let echoed = resp.headers()["x-correlation-id"].to_str().unwrap().to_string();
        let doc = echo(resp).await;
        assert_eq!(echoed, format!("http-{n}-1"));
        assert_eq!(doc["headers"]["x-correlation-id"], echoed.as_str());
    }
}

#[tokio::test]
async fn fake_responses_never_reach_upstream() {
    let (up_addr, up) = spawn_upstream().await;
    let engine = seeded_engine(1);
    engine
        .install_transform(
            CategoryId::Request,
            TransformSpec::new(CategoryId::Request, "fake_response")
                .param("url_pattern", "*/turn-credentials*")
                .param("status", 201)
                .param("body", "{\"username\":\"u\"}"),
        )
        .unwrap();
    let mut config = ProxyConfig::new(&format!("http://{up_addr}"));
    config.fault.fake_responses = vec![serde_json::from_value(serde_json::json!({
        "match": "*/maintenance", "status": 503, "body": "down"
    }))
    .unwrap()];
    let (proxy_addr, _) = spawn_proxy(engine, config).await;
    let client = reqwest::Client::new();

    let resp = client.get(format!("http://{proxy_addr}/turn-credentials?u=1")).send().await.unwrap();
    assert_eq!(resp.status(), 201);
    assert_eq!(resp.headers()["content-type"], "application/json");
    assert_eq!(resp.text().await.unwrap(), "{\"username\":\"u\"}");

    let resp = client.get(format!("http://{proxy_addr}/maintenance")).send().await.unwrap();
    assert_eq!(resp.status(), 503);
    assert_eq!(resp.text().await.unwrap(), "down");
    assert_eq!(up.http_hits.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn csp_relaxation_and_header_rules() {
    let (up_addr, _) = spawn_upstream().await;
    let engine = seeded_engine(1);
    engine
        .install_transform(CategoryId::Security, TransformSpec::new(CategoryId::Security, "relax_csp"))
        .unwrap();
    let mut config = ProxyConfig::new(&format!("http://{up_addr}"));
    config.header_rules = vec![
        HeaderRule::set(HeaderDirection::Request, "x-injected", "1"),
        HeaderRule::remove(HeaderDirection::Request, "x-secret"),
        HeaderRule::remove(HeaderDirection::Response, "set-cookie"),
    ];
    let (proxy_addr, _) = spawn_proxy(engine, config).await;
    let resp = reqwest::Client::new()
        .get(format!("http://{proxy_addr}/page"))
        .header("x-secret", "s")
        .send()
        .await
        .unwrap();
    let headers = resp.headers().clone();
    assert!(headers.get("content-security-policy").is_none());
    assert!(headers.get("x-frame-options").is_none());
    assert!(headers.get("set-cookie").is_none());
    assert_eq!(headers["x-upstream"], "yes");
    let doc = echo(resp).await;
    assert_eq!(doc["headers"]["x-injected"], "1");
    assert!(doc["headers"].get("x-secret").is_none());
}

#[tokio::test]
async fn drop_and_unreachable_upstream_map_to_502() {
    let (up_addr, up) = spawn_upstream().await;
    let mut config = ProxyConfig::new(&format!("http://{up_addr}"));
    config.fault.drop_prob = 1.0;
    let (proxy_addr, proxy) = spawn_proxy(seeded_engine(1), config).await;
    let resp = reqwest::get(format!("http://{proxy_addr}/x")).await.unwrap();
    assert_eq!(resp.status(), 502);
    assert_eq!(up.http_hits.load(Ordering::SeqCst), 0);
    assert_eq!(proxy.registry().session("http-1").unwrap().counters.dropped_c2s, 1);

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let (proxy_addr, _) = spawn_proxy(seeded_engine(1), ProxyConfig::new(&format!("http://127.0.0.1:{port}"))).await;
    assert_eq!(reqwest::get(format!("http://{proxy_addr}/x")).await.unwrap().status(), 502);
}

#[tokio::test]
async fn terminates_tls() {
    let (up_addr, _) = spawn_upstream().await;
    let cert = rcgen::generate_simple_self_signed(vec!["localhost".to_string()]).unwrap();
    let dir = std::env::temp_dir().join(format!("rtcshim-tls-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let tls = TlsPaths {
        cert: dir.join("cert.pem"),
        key: dir.join("key.pem"),
    };
    std::fs::write(&tls.cert, cert.cert.pem()).unwrap();
    std::fs::write(&tls.key, cert.key_pair.serialize_pem()).unwrap();

    let mut config = ProxyConfig::new(&format!("http://{up_addr}"));
    config.tls = Some(tls.clone());
    config.validate().unwrap();
    let proxy = rtcshim_proxy::Proxy::new(seeded_engine(1), &config).unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    tokio::spawn(async move { proxy.serve_tls(listener, &tls).await });

    let client = reqwest::Client::builder().danger_accept_invalid_certs(true).build().unwrap();
    let mut resp = None;
    for _ in 0..50 {
        if let Ok(r) = client.get(format!("https://localhost:{port}/secure")).send().await {
            resp = Some(r);
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    let doc = echo(resp.expect("tls handshake")).await;
    assert_eq!(doc["uri"], "/secure");
    std::fs::remove_dir_all(dir).ok();
}
