//! Admin HTTP API. Every mutation goes through the same engine calls as
//! config loading.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::Stream;
use rtcshim_core::{CategoryId, EngineSettings, Scalar};
use rtcshim_proxy::{FaultPolicy, HeaderRule, TimeRange};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::config::{install, CategorySpec};
use crate::service::{RunError, Service};

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(e: impl ToString) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.to_string())
    }

    fn not_found(e: impl ToString) -> Self {
        ApiError(StatusCode::NOT_FOUND, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;
type Svc = State<Arc<Service>>;

fn category(id: &str) -> Result<CategoryId, ApiError> {
    id.parse().map_err(ApiError::not_found)
}

fn to_json(v: impl serde::Serialize) -> Json<Value> {
    Json(serde_json::to_value(v).expect("api values serialize"))
}

#[derive(Deserialize)]
struct CatalogQuery {
    category: Option<String>,
}

async fn get_catalog(State(s): Svc, Query(q): Query<CatalogQuery>) -> ApiResult {
    let filter = q.category.as_deref().map(category).transpose()?;
    let entries: Vec<_> = s
        .engine
        .catalog_manifest()
        .into_iter()
        .filter(|e| filter.is_none_or(|c| e.category == c))
        .collect();
    Ok(to_json(entries))
}

fn category_doc(s: &Service, cat: CategoryId) -> Value {
    let counters = s.engine.counters().get(&cat).copied().unwrap_or_default();
    json!({
        "category": cat,
        "active": s.engine.active(cat),
        "counters": counters,
        "bindings": cat.bindings(),
    })
}

async fn list_categories(State(s): Svc) -> ApiResult {
    Ok(Json(Value::Array(CategoryId::ALL.iter().map(|c| category_doc(&s, *c)).collect())))
}

async fn get_category(State(s): Svc, Path(id): Path<String>) -> ApiResult {
    Ok(Json(category_doc(&s, category(&id)?)))
}

async fn put_category(State(s): Svc, Path(id): Path<String>, Json(spec): Json<CategorySpec>) -> ApiResult {
    let cat = category(&id)?;
    let handle = install(&s.engine, cat, spec).map_err(ApiError::bad_request)?;
    Ok(to_json(handle))
}

async fn delete_category(State(s): Svc, Path(id): Path<String>) -> ApiResult {
    let cat = category(&id)?;
    Ok(Json(json!({ "removed": s.engine.uninstall_transform(cat) })))
}

async fn list_controls(State(s): Svc) -> ApiResult {
    Ok(to_json(s.engine.controls().snapshot()))
}

async fn get_control(State(s): Svc, Path(name): Path<String>) -> ApiResult {
    s.engine
        .controls()
        .entry(&name)
        .map(to_json)
        .ok_or_else(|| ApiError::not_found(format!("no control `{name}`")))
}

async fn put_control(State(s): Svc, Path(name): Path<String>, Json(value): Json<Value>) -> ApiResult {
    let version = s.engine.controls().set_json(&name, &value).map_err(ApiError::bad_request)?;
    Ok(Json(json!({ "name": name, "version": version })))
}

async fn delete_control(State(s): Svc, Path(name): Path<String>) -> ApiResult {
    if s.engine.controls().delete(&name) {
        Ok(Json(json!({ "removed": true })))
    } else {
        Err(ApiError::not_found(format!("no control `{name}`")))
    }
}

async fn trigger_control(State(s): Svc, Path(name): Path<String>, body: Option<Json<Scalar>>) -> ApiResult {
    let payload = body.map(|Json(v)| v).unwrap_or(Scalar::Bool(true));
    let delivered = s.engine.controls().trigger(&name, payload);
    Ok(Json(json!({ "name": name, "delivered": delivered })))
}

#[derive(Deserialize)]
struct StreamQuery {
    pattern: Option<String>,
}

async fn control_stream(
    State(s): Svc,
    Query(q): Query<StreamQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let sub = s
        .engine
        .controls()
        .subscribe(q.pattern.as_deref().unwrap_or("*"))
        .map_err(ApiError::bad_request)?;
    let stream = futures_util::stream::unfold(sub, |sub| async move {
        loop {
            if let Some(ev) = sub.try_recv() {
                let event = Event::default()
                    .event("control")
                    .json_data(&ev)
                    .expect("control events serialize");
                return Some((Ok(event), sub));
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn list_sessions(State(s): Svc) -> ApiResult {
    Ok(Json(json!({
        "proxy": s.registry().sessions(),
        "stats": s.stats_sessions(),
    })))
}

#[derive(Deserialize)]
struct RangeQuery {
    from: Option<u64>,
    to: Option<u64>,
    metric: Option<String>,
}

async fn session_messages(State(s): Svc, Path(id): Path<String>, Query(q): Query<RangeQuery>) -> ApiResult {
    let range = TimeRange {
        from_ms: q.from,
        to_ms: q.to,
    };
    s.registry()
        .export_sequence(&id, range)
        .map(to_json)
        .map_err(ApiError::not_found)
}

async fn session_stats(State(s): Svc, Path(id): Path<String>, Query(q): Query<RangeQuery>) -> ApiResult {
    let from = q.from.unwrap_or(0);
    let to = q.to.unwrap_or(u64::MAX);
    match s.query_stats(&id, q.metric.as_deref(), from, to) {
        None => Err(ApiError::not_found(format!("no stats session `{id}`"))),
        Some(Err(e)) => Err(ApiError::bad_request(e)),
        Some(Ok(series)) => Ok(to_json(series)),
    }
}

async fn run_scenario(State(s): Svc, Json(doc): Json<Value>) -> ApiResult {
    let result = tokio::task::spawn_blocking(move || s.run_scenario(doc))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok(summary) => Ok(to_json(summary)),
        Err(e @ RunError::Invalid(_)) => Err(ApiError::bad_request(e)),
    }
}

async fn get_settings(State(s): Svc) -> ApiResult {
    Ok(to_json(s.engine.settings()))
}

async fn put_settings(State(s): Svc, Json(settings): Json<EngineSettings>) -> ApiResult {
    let removed = s.engine.set_settings(settings).map_err(ApiError::bad_request)?;
    Ok(Json(json!({ "settings": s.engine.settings(), "removed": removed })))
}

async fn get_failures(State(s): Svc) -> ApiResult {
    Ok(to_json(s.engine.failures()))
}

fn proxy_of(s: &Service) -> Result<&Arc<rtcshim_proxy::Proxy>, ApiError> {
    s.proxy.as_ref().ok_or_else(|| ApiError::not_found("no proxy configured"))
}

async fn get_fault(State(s): Svc) -> ApiResult {
    Ok(to_json(proxy_of(&s)?.fault_policy()))
}

async fn put_fault(State(s): Svc, Json(policy): Json<FaultPolicy>) -> ApiResult {
    let proxy = proxy_of(&s)?;
    proxy.set_fault_policy(policy).map_err(ApiError::bad_request)?;
    Ok(to_json(proxy.fault_policy()))
}

async fn get_header_rules(State(s): Svc) -> ApiResult {
    Ok(to_json(proxy_of(&s)?.header_rules()))
}

async fn put_header_rules(State(s): Svc, Json(rules): Json<Vec<HeaderRule>>) -> ApiResult {
    let proxy = proxy_of(&s)?;
    proxy.set_header_rules(rules).map_err(ApiError::bad_request)?;
    Ok(to_json(proxy.header_rules()))
}

/// Accepts `Authorization: Bearer <token>`, or `?access_token=<token>`
/// for event-stream clients that cannot set headers.
async fn require_token(State(s): Svc, req: Request, next: Next) -> Response {
    let Some(token) = s.config.admin.token.as_deref() else {
        return next.run(req).await;
    };
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let query = req
        .uri()
        .query()
        .and_then(|q| q.split('&').find_map(|kv| kv.strip_prefix("access_token=")));
    if bearer == Some(token) || query == Some(token) {
        next.run(req).await
    } else {
        let mut resp = ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()).into_response();
        resp.headers_mut()
            .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
        resp
    }
}

async fn panel_missing() -> ApiError {
    ApiError::not_found("control panel not installed; set admin.panel_dir")
}

pub fn router(service: Arc<Service>) -> Router {
    let api = Router::new()
        .route("/api/catalog", get(get_catalog))
        .route("/api/categories", get(list_categories))
        .route(
            "/api/categories/{id}",
            get(get_category).put(put_category).delete(delete_category),
        )
        .route("/api/controls", get(list_controls))
        .route("/api/controls/stream", get(control_stream))
        .route(
            "/api/controls/{name}",
            get(get_control).put(put_control).delete(delete_control),
        )
        .route("/api/controls/{name}/trigger", post(trigger_control))
        .route("/api/sessions", get(list_sessions))
        .route("/api/sessions/{id}/messages", get(session_messages))
        .route("/api/sessions/{id}/stats", get(session_stats))
        .route("/api/scenarios/run", post(run_scenario))
        .route("/api/settings", get(get_settings).put(put_settings))
        .route("/api/failures", get(get_failures))
        .route("/api/proxy/fault", get(get_fault).put(put_fault))
        .route("/api/proxy/header-rules", get(get_header_rules).put(put_header_rules));
    let api = match &service.config.admin.panel_dir {
        Some(dir) => api.nest_service("/panel", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.route("/panel", get(panel_missing)).route("/panel/{*rest}", get(panel_missing)),
    };
    api.layer(middleware::from_fn_with_state(service.clone(), require_token))
        .with_state(service)
}
