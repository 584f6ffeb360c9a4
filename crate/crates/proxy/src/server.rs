//! Proxy configuration, shared state and the axum listener.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::ws::WebSocketUpgrade;
use axum::extract::{ConnectInfo, FromRequestParts, Request, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use axum_server::tls_rustls::RustlsConfig;
use parking_lot::RwLock;
use rtcshim_core::http::{HeaderList, HeaderRule, HttpRequest, HttpResponse};
use rtcshim_core::Engine;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::fault::{FaultPolicy, PolicyError};
use crate::link::ProxiedLink;
use crate::record::{SessionRegistry, DEFAULT_RING_CAPACITY};

pub const DEFAULT_PROXY_ADDR: &str = "127.0.0.1:8090";
pub const DEFAULT_UPSTREAM_TIMEOUT_MS: u64 = 10_000;
const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsPaths {
    pub cert: PathBuf,
    pub key: PathBuf,
}

fn default_listen() -> String {
    DEFAULT_PROXY_ADDR.to_string()
}

fn default_capacity() -> usize {
    DEFAULT_RING_CAPACITY
}

fn default_timeout() -> u64 {
    DEFAULT_UPSTREAM_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Base URL of the signaling server; `http(s)` or `ws(s)`.
    pub upstream: String,
    #[serde(default)]
    pub header_rules: Vec<HeaderRule>,
    #[serde(default)]
    pub fault: FaultPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tls: Option<TlsPaths>,
    #[serde(default = "default_capacity")]
    pub ring_capacity: usize,
    #[serde(default = "default_timeout")]
    pub upstream_timeout_ms: u64,
}

impl ProxyConfig {
    pub fn new(upstream: &str) -> Self {
        ProxyConfig {
            listen: default_listen(),
            upstream: upstream.to_string(),
            header_rules: Vec::new(),
            fault: FaultPolicy::default(),
            tls: None,
            ring_capacity: DEFAULT_RING_CAPACITY,
            upstream_timeout_ms: DEFAULT_UPSTREAM_TIMEOUT_MS,
        }
    }

    pub fn validate(&self) -> Result<(), ProxyConfigError> {
        self.listen
            .parse::<SocketAddr>()
            .map_err(|_| ProxyConfigError::Listen(self.listen.clone()))?;
        let url = reqwest::Url::parse(&self.upstream).map_err(|_| ProxyConfigError::Upstream(self.upstream.clone()))?;
        if !matches!(url.scheme(), "http" | "https" | "ws" | "wss") || url.host_str().is_none() {
            return Err(ProxyConfigError::Upstream(self.upstream.clone()));
        }
        for rule in &self.header_rules {
            rule.validate().map_err(|e| ProxyConfigError::HeaderRule(e.to_string()))?;
        }
        self.fault.validate()?;
        if let Some(tls) = &self.tls {
            for path in [&tls.cert, &tls.key] {
                if !path.is_file() {
                    return Err(ProxyConfigError::Tls(path.display().to_string()));
                }
            }
        }
        if self.ring_capacity == 0 {
            return Err(ProxyConfigError::RingCapacity);
        }
        if self.upstream_timeout_ms == 0 {
            return Err(ProxyConfigError::Timeout);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProxyConfigError {
    #[error("proxy listen address `{0}` is not host:port")]
    Listen(String),
    #[error("upstream `{0}` must be an http(s) or ws(s) URL")]
    Upstream(String),
    #[error("invalid header rule: {0}")]
    HeaderRule(String),
    #[error("invalid fault policy: {0}")]
    Fault(#[from] PolicyError),
    #[error("TLS file `{0}` not found")]
    Tls(String),
    #[error("ring_capacity must be positive")]
    RingCapacity,
    #[error("upstream_timeout_ms must be positive")]
    Timeout,
}

pub struct Proxy {
    pub(crate) engine: Arc<Engine>,
    pub(crate) registry: Arc<SessionRegistry>,
    upstream: reqwest::Url,
    listen: String,
    tls: Option<TlsPaths>,
    header_rules: RwLock<Vec<HeaderRule>>,
    fault: RwLock<FaultPolicy>,
    pub(crate) timeout: Duration,
    pub(crate) client: reqwest::Client,
}

impl Proxy {
    pub fn new(engine: Arc<Engine>, config: &ProxyConfig) -> Result<Arc<Proxy>, ProxyConfigError> {
        config.validate()?;
        let registry = Arc::new(SessionRegistry::new(engine.clock().clone(), config.ring_capacity));
        let client = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .expect("http client");
        Ok(Arc::new(Proxy {
            engine,
            registry,
            upstream: reqwest::Url::parse(&config.upstream).expect("validated"),
            listen: config.listen.clone(),
            tls: config.tls.clone(),
            header_rules: RwLock::new(config.header_rules.clone()),
            fault: RwLock::new(config.fault.clone()),
            timeout: Duration::from_millis(config.upstream_timeout_ms),
            client,
        }))
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn registry(&self) -> &Arc<SessionRegistry> {
        &self.registry
    }

    pub fn fault_policy(&self) -> FaultPolicy {
        self.fault.read().clone()
    }

    /// Applies to sessions opened afterwards.
    pub fn set_fault_policy(&self, policy: FaultPolicy) -> Result<(), PolicyError> {
        policy.validate()?;
        *self.fault.write() = policy;
        Ok(())
    }

    pub fn header_rules(&self) -> Vec<HeaderRule> {
        self.header_rules.read().clone()
    }

    pub fn set_header_rules(&self, rules: Vec<HeaderRule>) -> Result<(), ProxyConfigError> {
        for rule in &rules {
            rule.validate().map_err(|e| ProxyConfigError::HeaderRule(e.to_string()))?;
        }
        *self.header_rules.write() = rules;
        Ok(())
    }

    fn join(&self, scheme: &str, path_and_query: &str) -> String {
        let mut base = self.upstream.clone();
        base.set_scheme(scheme).ok();
        let base = base.as_str().trim_end_matches('/').to_string();
        format!("{base}{path_and_query}")
    }

    pub fn upstream_ws_url(&self, path_and_query: &str) -> String {
        let secure = matches!(self.upstream.scheme(), "https" | "wss");
        self.join(if secure { "wss" } else { "ws" }, path_and_query)
    }

    pub fn upstream_http_url(&self, path_and_query: &str) -> String {
        let secure = matches!(self.upstream.scheme(), "https" | "wss");
        self.join(if secure { "https" } else { "http" }, path_and_query)
    }

    /// A harness signaling link whose messages cross this proxy's pipeline.
    pub fn link(&self) -> ProxiedLink {
        ProxiedLink::new(self.engine.clone(), self.registry.clone(), self.fault_policy())
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new().fallback(handle).with_state(self.clone())
    }

    pub async fn serve(self: Arc<Self>, listener: TcpListener) -> std::io::Result<()> {
        let app = self.router().into_make_service_with_connect_info::<SocketAddr>();
        axum::serve(listener, app).await
    }

    /// Binds the configured address, terminating TLS when cert and key
    /// paths are configured.
    pub async fn bind_and_serve(self: Arc<Self>) -> std::io::Result<()> {
        let listener = std::net::TcpListener::bind(&self.listen)?;
        tracing::info!(addr = %listener.local_addr()?, upstream = %self.upstream, tls = self.tls.is_some(), "proxy listening");
        match self.tls.clone() {
            Some(tls) => self.serve_tls(listener, &tls).await,
            None => {
                listener.set_nonblocking(true)?;
                self.serve(TcpListener::from_std(listener)?).await
            }
        }
    }

    pub async fn serve_tls(self: Arc<Self>, listener: std::net::TcpListener, tls: &TlsPaths) -> std::io::Result<()> {
        // reqwest and axum-server pull in different rustls backends; pick one.
        let _ = rustls::crypto::ring::default_provider().install_default();
        let config = RustlsConfig::from_pem_file(&tls.cert, &tls.key).await?;
        listener.set_nonblocking(true)?;
        let app = self.router().into_make_service_with_connect_info::<SocketAddr>();
        axum_server::from_tcp_rustls(listener, config).serve(app).await
    }
}

const HOP_BY_HOP: &[&str] = &[
    "connection",
    "keep-alive",
    "proxy-connection",
    "transfer-encoding",
    "te",
    "trailer",
    "upgrade",
    "host",
    "content-length",
];

pub(crate) fn is_hop_by_hop(name: &str) -> bool {
    HOP_BY_HOP.iter().any(|h| h.eq_ignore_ascii_case(name))
}

fn is_ws_upgrade(req: &Request) -> bool {
    req.headers()
        .get("upgrade")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.eq_ignore_ascii_case("websocket"))
}

async fn handle(State(proxy): State<Arc<Proxy>>, ConnectInfo(addr): ConnectInfo<SocketAddr>, req: Request) -> Response {
    let path = req
        .uri()
        .path_and_query()
        .map(|p| p.as_str().to_string())
        .unwrap_or_else(|| "/".into());
    if is_ws_upgrade(&req) {
        let (mut parts, _) = req.into_parts();
        return match WebSocketUpgrade::from_request_parts(&mut parts, &proxy).await {
            Ok(upgrade) => upgrade
                .on_upgrade(move |socket| crate::ws::run_session(proxy, socket, addr.to_string(), path))
                .into_response(),
            Err(rejection) => rejection.into_response(),
        };
    }
    let (parts, body) = req.into_parts();
    let body = match axum::body::to_bytes(body, MAX_BODY_BYTES).await {
        Ok(b) => b.to_vec(),
        Err(_) => return (StatusCode::PAYLOAD_TOO_LARGE, "request body too large").into_response(),
    };
    let headers: HeaderList = parts
        .headers
        .iter()
        .filter(|(k, _)| !is_hop_by_hop(k.as_str()))
        .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
        .collect();
    let request = HttpRequest {
        method: parts.method.as_str().to_string(),
        url: proxy.upstream_http_url(&path),
        headers,
        body,
    };
    to_axum(proxy.exchange(&addr.to_string(), request).await)
}

fn to_axum(r: HttpResponse) -> Response {
    let mut out = Response::new(Body::from(r.body));
    *out.status_mut() = StatusCode::from_u16(r.status).unwrap_or(StatusCode::BAD_GATEWAY);
    for (k, v) in r.headers {
        if is_hop_by_hop(&k) {
            continue;
        }
        if let (Ok(name), Ok(value)) = (HeaderName::try_from(k.as_str()), HeaderValue::try_from(v.as_str())) {
            out.headers_mut().append(name, value);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::DelaySpec;

    #[test]
    fn config_validation() {
        let mut c = ProxyConfig::new("http://127.0.0.1:9000");
        assert!(c.validate().is_ok());
        c.upstream = "ftp://x".into();
        assert!(matches!(c.validate(), Err(ProxyConfigError::Upstream(_))));
        c.upstream = "ws://127.0.0.1:9000".into();
        c.listen = "nowhere".into();
        assert!(matches!(c.validate(), Err(ProxyConfigError::Listen(_))));
        c.listen = DEFAULT_PROXY_ADDR.into();
        c.fault.delay = Some(DelaySpec::Uniform { min_ms: 5, max_ms: 1 });
        assert!(matches!(c.validate(), Err(ProxyConfigError::Fault(_))));
        c.fault = FaultPolicy::default();
        c.tls = Some(TlsPaths {
            cert: "/nonexistent/cert.pem".into(),
            key: "/nonexistent/key.pem".into(),
        });
        assert!(matches!(c.validate(), Err(ProxyConfigError::Tls(_))));
    }

    #[test]
    fn upstream_urls() {
        let p = Proxy::new(Arc::new(Engine::default()), &ProxyConfig::new("https://sig.example/base/")).unwrap();
        assert_eq!(p.upstream_ws_url("/room?x=1"), "wss://sig.example/base/room?x=1");
        assert_eq!(p.upstream_http_url("/api"), "https://sig.example/base/api");
        let p = Proxy::new(Arc::new(Engine::default()), &ProxyConfig::new("ws://127.0.0.1:9000")).unwrap();
        assert_eq!(p.upstream_http_url("/"), "http://127.0.0.1:9000/");
    }

    #[test]
    fn config_json_defaults() {
        let c: ProxyConfig = serde_json::from_str(r#"{"upstream":"http://127.0.0.1:1"}"#).unwrap();
        assert_eq!(c.ring_capacity, 10_000);
        assert_eq!(c.listen, DEFAULT_PROXY_ADDR);
        assert!(c.fault.is_empty());
    }
}
