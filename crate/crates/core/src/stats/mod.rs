//! Stats ingestion, derived quality metrics and series export.

mod codec;
mod metrics;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use codec::{
    decode_batch, encode_batch, BatchHeader, CodecError, SinkError, StatsForwarder, StatsSink,
    DEFAULT_PENDING_BATCHES, SINK_CONTENT_TYPE,
};
pub use metrics::{
    compute_mos, compute_mos_with, derive_metrics, detect_quality_gap, DerivedMetrics, EModel,
    QualityGap, QualityScore, VideoQuality,
};
pub use store::{metric_unit, IngestOutcome, PollSchedule, StatsStore, METRICS, DEFAULT_STATS_INTERVAL_MS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StatValue {
    Num(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsEntry {
    pub id: String,
    #[serde(rename = "type")]
    pub entry_type: String,
    pub timestamp_ms: f64,
    #[serde(default)]
    pub fields: BTreeMap<String, StatValue>,
}

/// Browser getStats names accepted in place of the snake_case ones.
const FIELD_ALIASES: &[(&str, &str)] = &[
    ("bytes_sent", "bytesSent"),
    ("bytes_received", "bytesReceived"),
    ("packets_sent", "packetsSent"),
    ("packets_received", "packetsReceived"),
    ("packets_lost", "packetsLost"),
    ("jitter_s", "jitter"),
    ("current_rtt_s", "currentRoundTripTime"),
    ("available_outgoing_bitrate", "availableOutgoingBitrate"),
    ("frame_width", "frameWidth"),
    ("frame_height", "frameHeight"),
    ("frames_per_second", "framesPerSecond"),
];

/// Monotone counters checked for regressions.
pub const COUNTERS: &[&str] = &[
    "bytes_sent",
    "bytes_received",
    "packets_sent",
    "packets_received",
    "packets_lost",
];

impl StatsEntry {
    pub fn new(id: &str, entry_type: &str, timestamp_ms: f64) -> Self {
        StatsEntry {
            id: id.to_string(),
            entry_type: entry_type.to_string(),
            timestamp_ms,
            fields: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.fields.insert(name.to_string(), StatValue::Num(value));
        self
    }

    pub fn num(&self, name: &str) -> Option<f64> {
        let alias = FIELD_ALIASES
            .iter()
            .find(|(snake, _)| *snake == name)
            .map(|(_, camel)| *camel);
        [Some(name), alias]
            .into_iter()
            .flatten()
            .find_map(|n| match self.fields.get(n) {
                Some(StatValue::Num(v)) => Some(*v),
                _ => None,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub session_id: String,
    pub taken_at_ms: u64,
    pub entries: BTreeMap<String, StatsEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("report at {got} ms is not after the previous report at {previous} ms")]
    DuplicateTimestamp { previous: u64, got: u64 },
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl StatsReport {
    pub fn new(session_id: &str, taken_at_ms: u64) -> Self {
        StatsReport {
            session_id: session_id.to_string(),
            taken_at_ms,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, entry: StatsEntry) {
        self.entries.insert(entry.id.clone(), entry);
    }

    pub fn with_entry(mut self, entry: StatsEntry) -> Self {
        self.insert(entry);
        self
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.taken_at_ms == 0 {
            return Err(StatsError::Malformed("taken_at_ms must be > 0".into()));
        }
        for (key, entry) in &self.entries {
            if key != &entry.id {
                return Err(StatsError::Malformed(format!("entry key {key} != id {}", entry.id)));
            }
            if entry.timestamp_ms.is_nan() || entry.timestamp_ms <= 0.0 {
                return Err(StatsError::Malformed(format!("entry {key} has no timestamp")));
            }
            for counter in COUNTERS {
                if entry.num(counter).is_some_and(|v| v < 0.0) {
                    return Err(StatsError::Malformed(format!("{key}.{counter} is negative")));
                }
            }
        }
        Ok(())
    }

    pub fn entries_of<'a>(&'a self, entry_type: &'a str) -> impl Iterator<Item = &'a StatsEntry> {
        self.entries.values().filter(move |e| e.entry_type == entry_type)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub unit: String,
    pub points: Vec<(u64, f64)>,
}

impl MetricSeries {
    pub fn new(name: &str, unit: &str) -> Self {
        MetricSeries {
            name: name.to_string(),
            unit: unit.to_string(),
            points: Vec::new(),
        }
    }
}
