use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use super::metrics::{compute_mos_with, derive_metrics, DerivedMetrics, EModel};
use super::{MetricSeries, StatsError, StatsReport};

pub const DEFAULT_STATS_INTERVAL_MS: u64 = 1000;

/// Points kept per metric and session before the oldest are discarded.
const MAX_POINTS: usize = 86_400;

pub const METRICS: &[&str] = &[
    "send_bitrate_bps",
    "recv_bitrate_bps",
    "packet_loss_rate",
    "jitter_ms",
    "rtt_ms",
    "available_bitrate_bps",
    "r_factor",
    "mos",
];

pub fn metric_unit(name: &str) -> Option<&'static str> {
    Some(match name {
        "send_bitrate_bps" | "recv_bitrate_bps" | "available_bitrate_bps" => "bps",
        "packet_loss_rate" => "fraction",
        "jitter_ms" | "rtt_ms" => "ms",
        "r_factor" => "r",
        "mos" => "mos",
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum IngestOutcome {
    Accepted {
        /// Present from the second report of a session on.
        metrics: Option<DerivedMetrics>,
    },
    Rejected {
        reason: StatsError,
    },
}

impl serde::Serialize for StatsError {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Default)]
struct SessionStats {
    last: Option<StatsReport>,
    series: BTreeMap<&'static str, MetricSeries>,
    reports: u64,
    restarts: u64,
}

impl SessionStats {
    fn push(&mut self, name: &'static str, t: u64, value: Option<f64>) {
        let Some(value) = value else { return };
        let series = self
            .series
            .entry(name)
            .or_insert_with(|| MetricSeries::new(name, metric_unit(name).unwrap_or("")));
        if series.points.len() == MAX_POINTS {
            series.points.remove(0);
        }
        series.points.push((t, value));
    }
}

/// Per-session report history and derived series. Ingestion for one
/// session is serialized by that session's lock; queries see a consistent
/// prefix.
#[derive(Default)]
pub struct StatsStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionStats>>>>,
    model: RwLock<EModel>,
}

impl StatsStore {
    pub fn new() -> Self {
        StatsStore::default()
    }

    pub fn set_model(&self, model: EModel) {
        *self.model.write() = model;
    }

    pub fn model(&self) -> EModel {
        *self.model.read()
    }

    fn session(&self, id: &str) -> Arc<Mutex<SessionStats>> {
        if let Some(s) = self.sessions.read().get(id) {
            return s.clone();
        }
        self.sessions.write().entry(id.to_string()).or_default().clone()
    }

    pub fn ingest(&self, report: StatsReport) -> IngestOutcome {
        if let Err(reason) = report.validate() {
            return IngestOutcome::Rejected { reason };
        }
        let session = self.session(&report.session_id);
        let mut s = session.lock();
        let metrics = match &s.last {
            Some(prev) if report.taken_at_ms <= prev.taken_at_ms => {
                return IngestOutcome::Rejected {
                    reason: StatsError::DuplicateTimestamp {
                        previous: prev.taken_at_ms,
                        got: report.taken_at_ms,
                    },
                }
            }
            Some(prev) => Some(derive_metrics(prev, &report).expect("timestamps checked")),
            None => None,
        };
        if let Some(m) = &metrics {
            if !m.restarted.is_empty() {
                tracing::info!(session = %report.session_id, ids = ?m.restarted, "stats counters restarted");
                s.restarts += m.restarted.len() as u64;
            }
            let t = m.t_ms;
            s.push("send_bitrate_bps", t, m.send_bitrate_bps);
            s.push("recv_bitrate_bps", t, m.recv_bitrate_bps);
            s.push("packet_loss_rate", t, m.packet_loss_rate);
            s.push("jitter_ms", t, m.jitter_ms);
            s.push("rtt_ms", t, m.rtt_ms);
            s.push("available_bitrate_bps", t, m.available_bitrate_bps);
            if let (Some(loss), Some(rtt)) = (m.packet_loss_rate, m.rtt_ms) {
                let model = self.model();
                if let Ok(q) = compute_mos_with(&model, loss, rtt, m.jitter_ms.unwrap_or(0.0)) {
                    s.push("r_factor", t, Some(q.r_factor));
                    s.push("mos", t, Some(q.mos));
                }
            }
        }
        s.reports += 1;
        s.last = Some(report);
        IngestOutcome::Accepted { metrics }
    }

    /// Points with `from <= t <= to`. Unknown sessions yield an empty series.
    pub fn query_series(
        &self,
        session_id: &str,
        metric: &str,
        from: u64,
        to: u64,
    ) -> Result<MetricSeries, StatsError> {
        let (name, unit) = METRICS
            .iter()
            .find(|m| **m == metric)
            .map(|m| (*m, metric_unit(m).unwrap_or("")))
            .ok_or_else(|| StatsError::UnknownMetric(metric.to_string()))?;
        let mut out = MetricSeries::new(name, unit);
        let Some(session) = self.sessions.read().get(session_id).cloned() else {
            return Ok(out);
        };
        let s = session.lock();
        if let Some(series) = s.series.get(name) {
            out.points = series
                .points
                .iter()
                .copied()
                .filter(|(t, _)| (from..=to).contains(t))
                .collect();
        }
        Ok(out)
    }

    pub fn all_series(&self, session_id: &str) -> Vec<MetricSeries> {
        self.sessions
            .read()
            .get(session_id)
            .map(|s| s.lock().series.values().cloned().collect())
            .unwrap_or_default()
    }

    pub fn sessions(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn report_count(&self, session_id: &str) -> u64 {
        self.sessions
            .read()
            .get(session_id)
            .map(|s| s.lock().reports)
            .unwrap_or(0)
    }

    pub fn restart_count(&self, session_id: &str) -> u64 {
        self.sessions
            .read()
            .get(session_id)
            .map(|s| s.lock().restarts)
            .unwrap_or(0)
    }
}

/// Fixed-interval polling times over a session lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PollSchedule {
    pub interval_ms: u64,
}

impl PollSchedule {
    pub fn new(interval_ms: u64) -> Self {
        PollSchedule {
            interval_ms: interval_ms.max(1),
        }
    }

    /// Poll instants in `(start, end]`.
    pub fn ticks(&self, start_ms: u64, end_ms: u64) -> impl Iterator<Item = u64> {
        let step = self.interval_ms;
        (1..)
            .map(move |k| start_ms + k * step)
            .take_while(move |t| *t <= end_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::StatsEntry;

    fn report(t: u64, bytes: f64) -> StatsReport {
        StatsReport::new("pc", t)
            .with_entry(
                StatsEntry::new("in", "inbound-rtp", t as f64)
                    .with("bytes_received", bytes)
                    .with("packets_received", bytes / 1000.0)
                    .with("packets_lost", 0.0),
            )
            .with_entry(StatsEntry::new("pair", "candidate-pair", t as f64).with("current_rtt_s", 0.05))
    }

    #[test]
    fn ingest_lifecycle() {
        let store = StatsStore::new();
        assert_eq!(store.ingest(report(1000, 0.0)), IngestOutcome::Accepted { metrics: None });
        match store.ingest(report(2000, 125_000.0)) {
            IngestOutcome::Accepted { metrics: Some(m) } => {
                assert_eq!(m.recv_bitrate_bps, Some(1_000_000.0))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            store.ingest(report(1500, 0.0)),
            IngestOutcome::Rejected { reason: StatsError::DuplicateTimestamp { .. } }
        ));
        assert_eq!(store.report_count("pc"), 2);
    }

    #[test]
    fn series_queries() {
        let store = StatsStore::new();
        for (i, t) in [1000, 2000, 3000].into_iter().enumerate() {
            store.ingest(report(t, i as f64 * 1000.0));
        }
        let s = store.query_series("pc", "recv_bitrate_bps", 0, u64::MAX).unwrap();
        assert_eq!(s.points.len(), 2);
        assert_eq!(s.unit, "bps");
        assert!(store.query_series("pc", "recv_bitrate_bps", 5000, 6000).unwrap().points.is_empty());
        assert_eq!(store.query_series("pc", "mos", 0, u64::MAX).unwrap().points.len(), 2);
        assert_eq!(
            store.query_series("pc", "bogus", 0, 1),
            Err(StatsError::UnknownMetric("bogus".into()))
        );
        assert!(store.query_series("nobody", "mos", 0, u64::MAX).unwrap().points.is_empty());
    }

    #[test]
    fn restart_is_counted_not_negative() {
        let store = StatsStore::new();
        store.ingest(report(1000, 50_000.0));
        store.ingest(report(2000, 10.0));
        assert_eq!(store.restart_count("pc"), 1);
        let s = store.query_series("pc", "recv_bitrate_bps", 0, u64::MAX).unwrap();
        assert!(s.points.iter().all(|(_, v)| *v >= 0.0));
    }

    #[test]
    fn poll_count_matches_lifetime() {
        for (interval, lifetime) in [(1000, 30_000), (250, 10_123), (700, 5_000), (100, 99)] {
            let n = PollSchedule::new(interval).ticks(0, lifetime).count() as i64;
            let expected = (lifetime / interval) as i64;
            assert!((n - expected).abs() <= 1, "{interval} {lifetime} {n}");
        }
    }
}
