//! Shared primitive-typed variables with versioned change events.
//!
//! Every set or delete of a name is assigned the next version for that name
//! while the bus lock is held, and the resulting event is queued to every
//! matching subscriber under the same lock, so each subscriber observes a
//! name's history in version order. Queues are bounded; when one fills up
//! the oldest event is discarded and counted.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};
use crate::scalar::Scalar;

pub const DEFAULT_SUBSCRIBER_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEntry {
    pub name: String,
    pub value: Scalar,
    pub version: u64,
    pub updated_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlEventKind {
    Updated,
    Deleted,
    Triggered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEvent {
    pub name: String,
    pub kind: ControlEventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_value: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_value: Option<Scalar>,
    /// Version assigned to the change. Triggers carry 0: they do not touch
    /// the stored value.
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ControlError {
    #[error("control name must not be empty")]
    EmptyName,
    #[error("control `{0}` must be a string, boolean or number")]
    InvalidType(String),
    #[error("invalid subscription pattern `{0}`")]
    InvalidPattern(String),
}

/// Exact name, prefix wildcard (`cpu.*`) or everything (`*`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NamePattern {
    Exact(String),
    Prefix(String),
}

impl NamePattern {
    pub fn parse(pattern: &str) -> Result<Self, ControlError> {
        if pattern.is_empty() {
            return Err(ControlError::InvalidPattern(pattern.to_string()));
        }
        match pattern.strip_suffix('*') {
            Some(prefix) if !prefix.contains('*') => Ok(NamePattern::Prefix(prefix.to_string())),
            Some(_) => Err(ControlError::InvalidPattern(pattern.to_string())),
            None if pattern.contains('*') => Err(ControlError::InvalidPattern(pattern.to_string())),
            None => Ok(NamePattern::Exact(pattern.to_string())),
        }
    }

    pub fn matches(&self, name: &str) -> bool {
        match self {
            NamePattern::Exact(n) => n == name,
            NamePattern::Prefix(p) => name.starts_with(p.as_str()),
        }
    }
}

struct SubscriberQueue {
    pattern: NamePattern,
    capacity: usize,
    events: Mutex<VecDeque<ControlEvent>>,
    ready: Condvar,
    dropped: AtomicU64,
    closed: AtomicBool,
}

impl SubscriberQueue {
    fn push(&self, event: ControlEvent) {
        let mut events = self.events.lock();
        if events.len() == self.capacity {
            events.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        events.push_back(event);
        self.ready.notify_one();
    }
}

/// Receiving end of a subscription. Dropping it unregisters the subscriber.
pub struct Subscription {
    queue: Arc<SubscriberQueue>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<ControlEvent> {
        self.queue.events.lock().pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<ControlEvent> {
        let deadline = Instant::now() + timeout;
        let mut events = self.queue.events.lock();
        loop {
            if let Some(ev) = events.pop_front() {
                return Some(ev);
            }
            if self.queue.ready.wait_until(&mut events, deadline).timed_out() {
                return events.pop_front();
            }
        }
    }

    pub fn drain(&self) -> Vec<ControlEvent> {
        self.queue.events.lock().drain(..).collect()
    }

    /// Events discarded because this subscriber fell behind.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    pub fn pattern(&self) -> &NamePattern {
        &self.queue.pattern
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.closed.store(true, Ordering::Release);
    }
}

#[derive(Default)]
struct BusState {
    entries: BTreeMap<String, ControlEntry>,
    // Survives deletion so versions are never reused.
    last_version: HashMap<String, u64>,
    subscribers: Vec<Arc<SubscriberQueue>>,
}

impl BusState {
    fn publish(&mut self, event: &ControlEvent) -> usize {
        self.subscribers
            .retain(|s| !s.closed.load(Ordering::Acquire));
        let mut delivered = 0;
        for sub in &self.subscribers {
            if sub.pattern.matches(&event.name) {
                sub.push(event.clone());
                delivered += 1;
            }
        }
        delivered
    }

    fn next_version(&mut self, name: &str) -> u64 {
        let v = self.last_version.entry(name.to_string()).or_insert(0);
        *v += 1;
        *v
    }
}

pub struct ControlsBus {
    state: Mutex<BusState>,
    clock: Arc<dyn Clock>,
    subscriber_capacity: usize,
}

impl Default for ControlsBus {
    fn default() -> Self {
        ControlsBus::new(Arc::new(SystemClock))
    }
}

impl ControlsBus {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        ControlsBus::with_capacity(clock, DEFAULT_SUBSCRIBER_CAPACITY)
    }

    pub fn with_capacity(clock: Arc<dyn Clock>, subscriber_capacity: usize) -> Self {
        ControlsBus {
            state: Mutex::new(BusState::default()),
            clock,
            subscriber_capacity: subscriber_capacity.max(1),
        }
    }

    pub fn set(&self, name: &str, value: impl Into<Scalar>) -> Result<u64, ControlError> {
        if name.is_empty() {
            return Err(ControlError::EmptyName);
        }
        let value = value.into();
        let now = self.clock.now_ms();
        let mut state = self.state.lock();
        let version = state.next_version(name);
        let old = state.entries.insert(
            name.to_string(),
            ControlEntry {
                name: name.to_string(),
                value: value.clone(),
                version,
                updated_at: now,
            },
        );
        let event = ControlEvent {
            name: name.to_string(),
            kind: ControlEventKind::Updated,
            old_value: old.map(|e| e.value),
            new_value: Some(value),
            version,
        };
        state.publish(&event);
        Ok(version)
    }

    /// Sets from an untyped document value; composites and null are rejected.
    pub fn set_json(&self, name: &str, value: &serde_json::Value) -> Result<u64, ControlError> {
        let scalar =
            Scalar::from_json(value).ok_or_else(|| ControlError::InvalidType(name.to_string()))?;
        self.set(name, scalar)
    }

    pub fn get(&self, name: &str) -> Option<Scalar> {
        self.state.lock().entries.get(name).map(|e| e.value.clone())
    }

    pub fn entry(&self, name: &str) -> Option<ControlEntry> {
        self.state.lock().entries.get(name).cloned()
    }

    pub fn delete(&self, name: &str) -> bool {
        let mut state = self.state.lock();
        let Some(old) = state.entries.remove(name) else {
            return false;
        };
        let version = state.next_version(name);
        let event = ControlEvent {
            name: name.to_string(),
            kind: ControlEventKind::Deleted,
            old_value: Some(old.value),
            new_value: None,
            version,
        };
        state.publish(&event);
        true
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, ControlError> {
        let queue = Arc::new(SubscriberQueue {
            pattern: NamePattern::parse(pattern)?,
            capacity: self.subscriber_capacity,
            events: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        });
        self.state.lock().subscribers.push(queue.clone());
        Ok(Subscription { queue })
    }

    /// Fires a stateless event; returns how many subscribers received it.
    pub fn trigger(&self, name: &str, payload: impl Into<Scalar>) -> usize {
        let event = ControlEvent {
            name: name.to_string(),
            kind: ControlEventKind::Triggered,
            old_value: None,
            new_value: Some(payload.into()),
            version: 0,
        };
        self.state.lock().publish(&event)
    }

    pub fn snapshot(&self) -> BTreeMap<String, ControlEntry> {
        self.state.lock().entries.clone()
    }

    pub fn snapshot_values(&self) -> BTreeMap<String, Scalar> {
        self.state
            .lock()
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect()
    }
}
