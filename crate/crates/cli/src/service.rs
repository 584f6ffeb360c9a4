//! Engine, proxy and scenario runner assembled from one config.

use std::collections::VecDeque;
use std::sync::Arc;

use parking_lot::Mutex;
use rtcshim_core::clock::SystemClock;
use rtcshim_core::harness::{run_scenario_with, Scenario, StepFailed, TranscriptEvent};
use rtcshim_core::stats::{
    MetricSeries, StatsError, StatsForwarder, StatsSink, StatsStore, DEFAULT_PENDING_BATCHES,
};
use rtcshim_core::Engine;
use rtcshim_proxy::{ProxiedLink, Proxy, SessionRegistry, DEFAULT_RING_CAPACITY};
use serde::Serialize;

use crate::config::{install, ConfigError, EngineConfig};

pub const RUN_HISTORY: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub name: String,
    pub error: Option<StepFailed>,
    /// Proxy session holding the signaling messages of the run.
    pub link_session: String,
    /// Stats sessions, addressable as `<run_id>:<endpoint>`.
    pub stats_sessions: Vec<String>,
    pub transcript: Vec<TranscriptEvent>,
}

struct RunStats {
    run_id: String,
    store: Arc<StatsStore>,
}

struct HttpSink;

impl StatsSink for HttpSink {
    fn post(&self, url: &str, content_type: &str, body: &[u8]) -> Result<(), String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(10))
            .build()
            .map_err(|e| e.to_string())?;
        let resp = client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, content_type)
            .body(body.to_vec())
            .send()
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("sink answered {}", resp.status()))
        }
    }
}

pub struct Service {
    pub config: EngineConfig,
    pub engine: Arc<Engine>,
    pub proxy: Option<Arc<Proxy>>,
    registry: Arc<SessionRegistry>,
    runs: Mutex<VecDeque<RunStats>>,
    next_run: Mutex<u64>,
    forwarder: StatsForwarder,
}

impl Service {
    pub fn build(config: EngineConfig) -> Result<Arc<Service>, ConfigError> {
        Self::build_with_sink(config, Box::new(HttpSink))
    }

    pub fn build_with_sink(config: EngineConfig, sink: Box<dyn StatsSink>) -> Result<Arc<Service>, ConfigError> {
        config.validate()?;
        let engine = Arc::new(Engine::with_settings(config.settings.clone()));
        for (cat, spec) in &config.categories {
            install(&engine, *cat, spec.clone()).map_err(|e| ConfigError::new(format!("categories.{cat}"), e))?;
        }
        for (name, value) in &config.controls_initial {
            engine
                .controls()
                .set(name, value.clone())
                .map_err(|e| ConfigError::new(format!("controls_initial.{name}"), e))?;
        }
        let proxy = match &config.proxy {
            Some(p) => Some(Proxy::new(engine.clone(), p).map_err(|e| ConfigError::new("proxy", e))?),
            None => None,
        };
        let registry = match &proxy {
            Some(p) => p.registry().clone(),
            None => Arc::new(SessionRegistry::new(Arc::new(SystemClock), DEFAULT_RING_CAPACITY)),
        };
        Ok(Arc::new(Service {
            config,
            engine,
            proxy,
            registry,
            runs: Mutex::new(VecDeque::new()),
            next_run: Mutex::new(0),
            forwarder: StatsForwarder::new(sink, DEFAULT_PENDING_BATCHES),
        }))
    }

    /// Proxy sessions, plus the link sessions of scenario runs.
    pub fn registry(&self) -> &Arc<SessionRegistry> {
        &self.registry
    }

    /// Runs a scenario document. Endpoint fields missing from the
    /// document come from the harness defaults; categories and controls
    /// the scenario leaves unset come from the live engine. Signaling
    /// crosses the proxy pipeline and is recorded as a `link-N` session.
    /// Blocks for wall-clock scenarios.
    pub fn run_scenario(&self, mut doc: serde_json::Value) -> Result<RunSummary, RunError> {
        self.config.harness.apply_to_scenario(&mut doc);
        let mut scenario: Scenario = serde_json::from_value(doc).map_err(|e| RunError::Invalid(e.to_string()))?;
        scenario.validate().map_err(RunError::Invalid)?;
        for active in self.engine.active_all() {
            if !scenario.transforms.iter().any(|t| t.category == active.spec.category) {
                scenario.transforms.push(active.spec);
            }
        }
        for (name, value) in self.engine.controls().snapshot_values() {
            scenario.controls.entry(name).or_insert(value);
        }

        let policy = self.proxy.as_ref().map(|p| p.fault_policy()).unwrap_or_default();
        let link = ProxiedLink::new(self.engine.clone(), self.registry.clone(), policy);
        let link_session = link.session_id().to_string();
        let run = run_scenario_with(&scenario, Box::new(link));

        let run_id = {
            let mut n = self.next_run.lock();
            *n += 1;
            format!("run-{n}")
        };
        let store = run.harness.stats_store().clone();
        let endpoints = store.sessions();
        if let Some(sink) = &self.engine.settings().savestats_sink {
            for id in &endpoints {
                if let Err(e) = self.forwarder.compress_and_send(&store, id, sink) {
                    tracing::warn!(run = %run_id, session = %id, "savestats: {e}");
                }
            }
        }
        {
            let mut runs = self.runs.lock();
            if runs.len() == RUN_HISTORY {
                runs.pop_front();
            }
            runs.push_back(RunStats {
                run_id: run_id.clone(),
                store,
            });
        }
        Ok(RunSummary {
            stats_sessions: endpoints.iter().map(|e| format!("{run_id}:{e}")).collect(),
            run_id,
            name: scenario.name.clone(),
            error: run.error.clone(),
            link_session,
            transcript: run.harness.transcript().events.clone(),
        })
    }

    pub fn stats_sessions(&self) -> Vec<String> {
        self.runs
            .lock()
            .iter()
            .flat_map(|r| r.store.sessions().into_iter().map(move |s| format!("{}:{s}", r.run_id)))
            .collect()
    }

    fn store_for(&self, session: &str) -> Option<(Arc<StatsStore>, String)> {
        let (run_id, endpoint) = session.split_once(':')?;
        let runs = self.runs.lock();
        let run = runs.iter().find(|r| r.run_id == run_id)?;
        Some((run.store.clone(), endpoint.to_string()))
    }

    /// `None` when the session is unknown; every metric when `metric` is
    /// `None`.
    pub fn query_stats(
        &self,
        session: &str,
        metric: Option<&str>,
        from: u64,
        to: u64,
    ) -> Option<Result<Vec<MetricSeries>, StatsError>> {
        let (store, endpoint) = self.store_for(session)?;
        if !store.sessions().contains(&endpoint) {
            return None;
        }
        Some(match metric {
            Some(m) => store.query_series(&endpoint, m, from, to).map(|s| vec![s]),
            None => Ok(store
                .all_series(&endpoint)
                .into_iter()
                .map(|mut s| {
                    s.points.retain(|(t, _)| (from..=to).contains(t));
                    s
                })
                .collect()),
        })
    }

    pub fn savestats_pending(&self) -> usize {
        self.forwarder.pending()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct Capture(Arc<Mutex<Vec<(String, usize)>>>);

    impl StatsSink for Capture {
        fn post(&self, url: &str, _: &str, body: &[u8]) -> Result<(), String> {
            self.0.lock().push((url.to_string(), body.len()));
            Ok(())
        }
    }

    fn call_scenario() -> serde_json::Value {
        json!({
            "name": "call",
            "endpoints": [{"id": "alice"}, {"id": "bob"}],
            "steps": [
                {"at_ms": 0, "action": "call", "params": {"from": "alice", "to": "bob", "complete": true}},
                {"at_ms": 5000, "action": "hangup", "params": {"endpoint": "alice"}}
            ]
        })
    }

    #[test]
    fn scenario_inherits_live_transforms() {
        let config = EngineConfig::from_json(
            r#"{"categories": {"Session": {"builtin": "prefer_codec", "params": {"kind": "video", "codec": "H264"}}}}"#,
        )
        .unwrap();
        let svc = Service::build(config).unwrap();
        let run = svc.run_scenario(call_scenario()).unwrap();
        assert!(run.error.is_none(), "{:?}", run.error);
        let negotiated = run.transcript.iter().find(|e| e.event == "negotiated").unwrap();
        assert_eq!(negotiated.detail["codecs"]["video"], "H264");
        let records = svc
            .registry()
            .export_sequence(&run.link_session, Default::default())
            .unwrap()
            .records;
        assert!(records.len() >= 4);
        assert!(records[0].payload.as_text().unwrap().contains("H264"));
    }

    #[test]
    fn stats_are_addressed_per_run() {
        let svc = Service::build(EngineConfig::default()).unwrap();
        let first = svc.run_scenario(call_scenario()).unwrap();
        let second = svc.run_scenario(call_scenario()).unwrap();
        assert_eq!(first.run_id, "run-1");
        assert_eq!(second.stats_sessions, ["run-2:alice"]);
        let series = svc.query_stats("run-1:alice", Some("rtt_ms"), 0, u64::MAX).unwrap().unwrap();
        assert!(series[0].points.len() >= 3);
        assert!(svc.query_stats("run-1:nobody", None, 0, u64::MAX).is_none());
        assert!(svc.query_stats("run-9:alice", None, 0, u64::MAX).is_none());
        assert!(svc.query_stats("run-1:alice", Some("nope"), 0, u64::MAX).unwrap().is_err());
        assert_eq!(svc.stats_sessions(), ["run-1:alice", "run-2:alice"]);
    }

    #[test]
    fn savestats_forwards_each_stats_session() {
        let posted = Arc::new(Mutex::new(Vec::new()));
        let config = EngineConfig::from_json(r#"{"settings": {"savestats_sink": "http://collector.test/in"}}"#).unwrap();
        let svc = Service::build_with_sink(config, Box::new(Capture(posted.clone()))).unwrap();
        svc.run_scenario(call_scenario()).unwrap();
        let posted = posted.lock();
        assert_eq!(posted.len(), 1);
        assert!(posted.iter().all(|(url, size)| url == "http://collector.test/in" && *size > 0));
    }

    #[test]
    fn bad_scenarios_are_rejected() {
        let svc = Service::build(EngineConfig::default()).unwrap();
        assert!(svc.run_scenario(json!({"steps": []})).is_err());
        let unordered = json!({"name": "x", "steps": [
            {"at_ms": 5, "action": "wait"}, {"at_ms": 1, "action": "wait"}]});
        assert!(svc.run_scenario(unordered).is_err());
    }
}
