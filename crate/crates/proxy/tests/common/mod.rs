#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Request, State};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get};
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use parking_lot::Mutex;
use rtcshim_core::engine::WireMessage;
use rtcshim_core::{Engine, EngineSettings};
use rtcshim_proxy::{Proxy, ProxyConfig};
use tokio::net::TcpListener;
use tokio::time::Instant;

/// What the fake signaling server saw and sent, with arrival times.
#[derive(Default)]
pub struct Upstream {
    pub received: Mutex<Vec<(Instant, WireMessage)>>,
    pub sent: Mutex<Vec<WireMessage>>,
    pub http_hits: AtomicUsize,
}

/// Reply the upstream sends for each message: tagged, reversed payload.
pub fn upstream_reply(m: &WireMessage) -> WireMessage {
    match m {
        WireMessage::Text(t) => WireMessage::Text(format!("re:{}", t.chars().rev().collect::<String>())),
        WireMessage::Binary(b) => {
            let mut out = vec![0xEE];
            out.extend(b.iter().rev());
            WireMessage::Binary(out)
        }
    }
}

async fn ws_echo(ws: WebSocketUpgrade, State(up): State<Arc<Upstream>>) -> Response {
    ws.on_upgrade(move |socket: WebSocket| async move {
        let (mut tx, mut rx) = socket.split();
        while let Some(Ok(m)) = rx.next().await {
            let wire = match m {
                Message::Text(t) => WireMessage::Text(t.as_str().to_string()),
                Message::Binary(b) => WireMessage::Binary(b.to_vec()),
                Message::Close(_) => break,
                _ => continue,
            };
            up.received.lock().push((Instant::now(), wire.clone()));
            let reply = upstream_reply(&wire);
            up.sent.lock().push(reply.clone());
            let out = match reply {
                WireMessage::Text(t) => Message::Text(t.into()),
                WireMessage::Binary(b) => Message::Binary(b.into()),
            };
            if tx.send(out).await.is_err() {
                break;
            }
        }
    })
}

async fn http_echo(State(up): State<Arc<Upstream>>, req: Request) -> Response {
    up.http_hits.fetch_add(1, Ordering::SeqCst);
    let (parts, body) = req.into_parts();
    let body = axum::body::to_bytes(body, usize::MAX).await.unwrap();
    let headers: serde_json::Map<String, serde_json::Value> = parts
        .headers
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").into()))
        .collect();
    let doc = serde_json::json!({
        "method": parts.method.as_str(),
        "uri": parts.uri.to_string(),
        "headers": headers,
        "body": String::from_utf8_lossy(&body),
    });
    (
        [
            ("content-security-policy", "default-src 'self'"),
            ("x-frame-options", "DENY"),
            ("x-upstream", "yes"),
            ("set-cookie", "sid=1"),
        ],
        axum::Json(doc),
    )
        .into_response()
}

pub async fn spawn_upstream() -> (SocketAddr, Arc<Upstream>) {
    let up = Arc::new(Upstream::default());
    let app = Router::new()
        .route("/ws", get(ws_echo))
        .fallback(any(http_echo))
        .with_state(up.clone());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, up)
}

pub fn seeded_engine(seed: u64) -> Arc<Engine> {
    Arc::new(Engine::with_settings(EngineSettings {
        seed: Some(seed),
        ..Default::default()
    }))
}

pub async fn spawn_proxy(engine: Arc<Engine>, config: ProxyConfig) -> (SocketAddr, Arc<Proxy>) {
    let proxy = Proxy::new(engine, &config).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(proxy.clone().serve(listener));
    (addr, proxy)
}

/// Polls `cond` every 10 ms until it holds or `limit` passes.
pub async fn wait_for(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + limit;
    while Instant::now() < end {
        if cond() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    cond()
}
