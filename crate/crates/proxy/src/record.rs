//! Per-session message records, counters and fault effects.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;
use rtcshim_core::clock::Clock;
use rtcshim_core::engine::WireMessage;
use serde::{Deserialize, Serialize};

use crate::fault::FaultEffect;

pub const DEFAULT_RING_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    C2s,
    S2c,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::C2s => "c2s",
            Direction::S2c => "s2c",
        }
    }

    pub fn reversed(self) -> Direction {
        match self {
            Direction::C2s => Direction::S2c,
            Direction::S2c => Direction::C2s,
        }
    }
}

/// What happened to one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Forwarded,
    Dropped,
    /// Consumed by the proxy and answered in the other direction.
    AnsweredLocally,
    /// Synthesized by the proxy rather than received.
    Synthesized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub session_id: String,
    pub seq: u64,
    pub direction: Direction,
    pub t_ms: u64,
    pub payload: WireMessage,
    pub size: usize,
    pub modified: bool,
    pub dropped: bool,
    pub disposition: Disposition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<WireMessage>,
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCounters {
    pub msgs_c2s: u64,
    pub msgs_s2c: u64,
    pub bytes_c2s: u64,
    pub bytes_s2c: u64,
    pub modified_count: u64,
    pub forwarded_c2s: u64,
    pub forwarded_s2c: u64,
    pub dropped_c2s: u64,
    pub dropped_s2c: u64,
    pub answered_c2s: u64,
    pub answered_s2c: u64,
    pub synthesized: u64,
}

impl SessionCounters {
    fn count(&mut self, r: &MessageRecord) {
        if r.modified {
            self.modified_count += 1;
        }
        if r.disposition == Disposition::Synthesized {
            self.synthesized += 1;
            return;
        }
        let (msgs, bytes, forwarded, dropped, answered) = match r.direction {
            Direction::C2s => (
                &mut self.msgs_c2s,
                &mut self.bytes_c2s,
                &mut self.forwarded_c2s,
                &mut self.dropped_c2s,
                &mut self.answered_c2s,
            ),
            Direction::S2c => (
                &mut self.msgs_s2c,
                &mut self.bytes_s2c,
                &mut self.forwarded_s2c,
                &mut self.dropped_s2c,
                &mut self.answered_s2c,
            ),
        };
        *msgs += 1;
        *bytes += r.size as u64;
        match r.disposition {
            Disposition::Forwarded => *forwarded += 1,
            Disposition::Dropped => *dropped += 1,
            Disposition::AnsweredLocally => *answered += 1,
            Disposition::Synthesized => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySession {
    pub id: String,
    pub client_endpoint: String,
    pub upstream_url: String,
    pub opened_at_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_reason: Option<String>,
    pub counters: SessionCounters,
    pub evicted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown session `{0}`")]
pub struct UnknownSession(pub String);

/// Inclusive time window; open ends are unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from_ms: Option<u64>,
    pub to_ms: Option<u64>,
}

impl TimeRange {
    pub fn contains(&self, t: u64) -> bool {
        self.from_ms.is_none_or(|f| t >= f) && self.to_ms.is_none_or(|to| t <= to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceExport {
    pub session: ProxySession,
    pub records: Vec<MessageRecord>,
    /// Records evicted from the ring since the session opened.
    pub evicted: u64,
}

struct SessionEntry {
    info: ProxySession,
    records: VecDeque<MessageRecord>,
    effects: VecDeque<FaultEffect>,
    next_seq: u64,
    last_t: u64,
}

struct Inner {
    sessions: BTreeMap<String, SessionEntry>,
    opened: BTreeMap<&'static str, u64>,
}

pub struct SessionRegistry {
    clock: Arc<dyn Clock>,
    capacity: usize,
    inner: Mutex<Inner>,
}

impl SessionRegistry {
    pub fn new(clock: Arc<dyn Clock>, capacity: usize) -> Self {
        SessionRegistry {
            clock,
            capacity: capacity.max(1),
            inner: Mutex::new(Inner {
                sessions: BTreeMap::new(),
                opened: BTreeMap::new(),
            }),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    /// Opens a session named `<prefix>-<n>`, numbered per prefix.
    pub fn open(&self, prefix: &'static str, client_endpoint: &str, upstream_url: &str) -> String {
        let now = self.clock.now_ms();
        let mut inner = self.inner.lock();
        let n = inner.opened.entry(prefix).or_insert(0);
        *n += 1;
        let id = format!("{prefix}-{n}");
        inner.sessions.insert(
            id.clone(),
            SessionEntry {
                info: ProxySession {
                    id: id.clone(),
                    client_endpoint: client_endpoint.to_string(),
                    upstream_url: upstream_url.to_string(),
                    opened_at_ms: now,
                    closed_at_ms: None,
                    close_reason: None,
                    counters: SessionCounters::default(),
                    evicted: 0,
                },
                records: VecDeque::new(),
                effects: VecDeque::new(),
                next_seq: 1,
                last_t: now,
            },
        );
        id
    }

    pub fn set_upstream(&self, id: &str, upstream_url: &str) {
        if let Some(e) = self.inner.lock().sessions.get_mut(id) {
            e.info.upstream_url = upstream_url.to_string();
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &self,
        id: &str,
        direction: Direction,
        payload: WireMessage,
        original: Option<WireMessage>,
        disposition: Disposition,
        delay_ms: u64,
    ) -> Option<MessageRecord> {
        let now = self.clock.now_ms();
        let mut inner = self.inner.lock();
        let entry = inner.sessions.get_mut(id)?;
        let t_ms = now.max(entry.last_t);
        entry.last_t = t_ms;
        let record = MessageRecord {
            session_id: id.to_string(),
            seq: entry.next_seq,
            direction,
            t_ms,
            size: payload.len(),
            payload,
            modified: original.is_some(),
            dropped: disposition == Disposition::Dropped,
            disposition,
            original,
            delay_ms,
        };
        entry.next_seq += 1;
        entry.info.counters.count(&record);
        if entry.records.len() == self.capacity {
            entry.records.pop_front();
            entry.info.evicted += 1;
        }
        entry.records.push_back(record.clone());
        Some(record)
    }

    pub fn effect(&self, id: &str, effect: FaultEffect) {
        let mut inner = self.inner.lock();
        if let Some(entry) = inner.sessions.get_mut(id) {
            if entry.effects.len() == self.capacity {
                entry.effects.pop_front();
            }
            tracing::debug!(session = id, ?effect, "fault effect");
            entry.effects.push_back(effect);
        }
    }

    pub fn close(&self, id: &str, reason: &str) {
        let now = self.clock.now_ms();
        if let Some(e) = self.inner.lock().sessions.get_mut(id) {
            if e.info.closed_at_ms.is_none() {
                e.info.closed_at_ms = Some(now);
                e.info.close_reason = Some(reason.to_string());
            }
        }
    }

    pub fn sessions(&self) -> Vec<ProxySession> {
        self.inner.lock().sessions.values().map(|e| e.info.clone()).collect()
    }

    pub fn session(&self, id: &str) -> Result<ProxySession, UnknownSession> {
        self.inner
            .lock()
            .sessions
            .get(id)
            .map(|e| e.info.clone())
            .ok_or_else(|| UnknownSession(id.to_string()))
    }

    pub fn export_sequence(&self, id: &str, range: TimeRange) -> Result<SequenceExport, UnknownSession> {
        let inner = self.inner.lock();
        let e = inner.sessions.get(id).ok_or_else(|| UnknownSession(id.to_string()))?;
        Ok(SequenceExport {
            session: e.info.clone(),
            records: e.records.iter().filter(|r| range.contains(r.t_ms)).cloned().collect(),
            evicted: e.info.evicted,
        })
    }

    pub fn effects(&self, id: &str) -> Result<Vec<FaultEffect>, UnknownSession> {
        self.inner
            .lock()
            .sessions
            .get(id)
            .map(|e| e.effects.iter().cloned().collect())
            .ok_or_else(|| UnknownSession(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rtcshim_core::clock::VirtualClock;

    fn text(s: &str) -> WireMessage {
        WireMessage::Text(s.to_string())
    }

    #[test]
    fn records_in_time_order() {
        let clock = VirtualClock::new(1000);
        let reg = SessionRegistry::new(Arc::new(clock.clone()), 16);
        let id = reg.open("ws", "127.0.0.1:1", "ws://up/");
        assert_eq!(id, "ws-1");
        for (i, m) in ["a", "bb", "ccc"].iter().enumerate() {
            clock.advance(10);
            let dir = if i % 2 == 0 { Direction::C2s } else { Direction::S2c };
            reg.record(&id, dir, text(m), None, Disposition::Forwarded, 0);
        }
        let out = reg.export_sequence(&id, TimeRange::default()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.records.windows(2).all(|w| w[0].t_ms < w[1].t_ms && w[0].seq < w[1].seq));
        assert_eq!(out.records[1].size, 2);
        assert_eq!(out.session.counters.msgs_c2s, 2);
        assert_eq!(out.session.counters.bytes_c2s, 4);
        assert_eq!(out.session.counters.msgs_s2c, 1);
        let window = reg
            .export_sequence(&id, TimeRange { from_ms: Some(1015), to_ms: Some(1020) })
            .unwrap();
        assert_eq!(window.records.len(), 1);
    }

    #[test]
    fn ring_evicts_oldest() {
        let reg = SessionRegistry::new(Arc::new(VirtualClock::new(0)), 2);
        let id = reg.open("ws", "c", "u");
        for m in ["1", "2", "3"] {
            reg.record(&id, Direction::C2s, text(m), None, Disposition::Forwarded, 0);
        }
        let out = reg.export_sequence(&id, TimeRange::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.evicted, 1);
        assert_eq!(out.records[0].payload, text("2"));
        assert_eq!(out.session.counters.msgs_c2s, 3);
    }

    #[test]
    fn unknown_session() {
        let reg = SessionRegistry::new(Arc::new(VirtualClock::new(0)), 2);
        assert_eq!(
            reg.export_sequence("nope", TimeRange::default()).unwrap_err(),
            UnknownSession("nope".into())
        );
        assert!(reg.session("nope").is_err());
    }

    #[test]
    fn counters_cohere() {
        let reg = SessionRegistry::new(Arc::new(VirtualClock::new(0)), 8);
        let id = reg.open("ws", "c", "u");
        reg.record(&id, Direction::C2s, text("a"), None, Disposition::Forwarded, 0);
        reg.record(&id, Direction::C2s, text("b"), Some(text("x")), Disposition::Forwarded, 0);
        reg.record(&id, Direction::C2s, text("c"), None, Disposition::Dropped, 0);
        reg.record(&id, Direction::C2s, text("d"), None, Disposition::AnsweredLocally, 0);
        reg.record(&id, Direction::S2c, text("e"), None, Disposition::Synthesized, 0);
        let c = reg.session(&id).unwrap().counters;
        assert_eq!(c.msgs_c2s, c.forwarded_c2s + c.dropped_c2s + c.answered_c2s);
        assert_eq!((c.msgs_c2s, c.msgs_s2c, c.synthesized, c.modified_count), (4, 0, 1, 1));
        let dropped = reg.export_sequence(&id, TimeRange::default()).unwrap().records[2].clone();
        assert!(dropped.dropped);
    }
}
