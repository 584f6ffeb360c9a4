use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value};

use super::{InterceptContext, Payload};
use crate::category::CategoryId;
use crate::controls::ControlsBus;
use crate::scalar::Scalar;

/// Read access to a controls snapshot taken when the binding was
/// materialized, plus write access to the live bus.
#[derive(Clone)]
pub struct ControlsHandle {
    snapshot: BTreeMap<String, Scalar>,
    bus: Arc<ControlsBus>,
}

impl ControlsHandle {
    pub fn new(bus: Arc<ControlsBus>) -> Self {
        ControlsHandle {
            snapshot: bus.snapshot_values(),
            bus,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Scalar> {
        self.snapshot.get(name)
    }

    pub fn snapshot(&self) -> &BTreeMap<String, Scalar> {
        &self.snapshot
    }

    /// Writes to the bus; the snapshot is left as taken.
    pub fn set(&self, name: &str, value: impl Into<Scalar>) {
        if let Err(e) = self.bus.set(name, value) {
            tracing::warn!("controls write failed: {e}");
        }
    }

    pub fn trigger(&self, name: &str, payload: impl Into<Scalar>) {
        self.bus.trigger(name, payload);
    }
}

impl std::fmt::Debug for ControlsHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("ControlsHandle").field(&self.snapshot).finish()
    }
}

#[derive(Debug, Clone)]
pub enum BoundValue {
    Absent,
    Value(Value),
    Controls(ControlsHandle),
}

impl BoundValue {
    pub fn is_absent(&self) -> bool {
        matches!(self, BoundValue::Absent)
    }

    pub fn as_value(&self) -> Option<&Value> {
        match self {
            BoundValue::Value(v) => Some(v),
            _ => None,
        }
    }
}

/// A value offered for binding. `Lazy` ones are only computed when a
/// transform asks for them by name.
pub enum Binding<'a> {
    Ready(BoundValue),
    Lazy(Box<dyn Fn() -> BoundValue + 'a>),
}

pub type Available<'a> = BTreeMap<&'static str, Binding<'a>>;

#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    names: Vec<String>,
    values: Vec<BoundValue>,
}

impl BoundParams {
    pub fn values(&self) -> &[BoundValue] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&BoundValue> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i])
            .filter(|v| !v.is_absent())
    }

    pub fn controls(&self) -> Option<&ControlsHandle> {
        match self.get("controls") {
            Some(BoundValue::Controls(h)) => Some(h),
            _ => None,
        }
    }
}

/// Values for exactly the requested names, in order; unknown names bind
/// to [`BoundValue::Absent`].
pub fn bind_params(requested: &[String], available: &Available<'_>) -> BoundParams {
    let values = requested
        .iter()
        .map(|name| match available.get(name.as_str()) {
            Some(Binding::Ready(v)) => v.clone(),
            Some(Binding::Lazy(f)) => f(),
            None => BoundValue::Absent,
        })
        .collect();
    BoundParams {
        names: requested.to_vec(),
        values,
    }
}

fn payload_binding_names(category: CategoryId) -> &'static [&'static str] {
    match category {
        CategoryId::Session => &["session"],
        CategoryId::Network => &["candidate"],
        CategoryId::Media => &["constraints"],
        CategoryId::Devices => &["devices"],
        CategoryId::Connect => &["config", "configuration"],
        CategoryId::Stats => &["query"],
        CategoryId::Data => &["channel"],
        CategoryId::Socket => &["socket"],
        CategoryId::Request => &["xhr"],
        CategoryId::Security => &["headers"],
        CategoryId::Cpu => &["details"],
    }
}

pub(super) fn available_for<'a>(
    category: CategoryId,
    ctx: &'a InterceptContext,
    payload: &'a Payload,
    controls: &'a Arc<ControlsBus>,
) -> Available<'a> {
    let mut a: Available<'a> = BTreeMap::new();
    let ready = |v: Value| Binding::Ready(BoundValue::Value(v));
    a.insert("context", ready(json!(ctx.context)));
    a.insert("type", ready(json!(ctx.kind.as_str())));
    a.insert("id", ready(json!(ctx.session_id)));
    a.insert("connection", ready(json!({ "id": ctx.session_id })));
    a.insert("args", Binding::Lazy(Box::new(|| BoundValue::Value(Value::Array(ctx.args.clone())))));
    a.insert("argos", Binding::Lazy(Box::new(|| BoundValue::Value(Value::Array(ctx.args.clone())))));
    a.insert("data", Binding::Lazy(Box::new(|| BoundValue::Value(Value::Object(ctx.state.clone())))));
    a.insert("controls", Binding::Lazy(Box::new(|| BoundValue::Controls(ControlsHandle::new(controls.clone())))));
    for name in payload_binding_names(category) {
        a.insert(name, Binding::Lazy(Box::new(|| BoundValue::Value(payload.to_json()))));
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn binds_in_declared_order_with_absent_markers() {
        let mut a: Available = BTreeMap::new();
        a.insert("session", Binding::Ready(BoundValue::Value(json!("sdp"))));
        a.insert("id", Binding::Ready(BoundValue::Value(json!("pc1"))));
        let b = bind_params(&names(&["id", "candidate", "session"]), &a);
        assert_eq!(b.values()[0].as_value(), Some(&json!("pc1")));
        assert!(b.values()[1].is_absent());
        assert_eq!(b.values()[2].as_value(), Some(&json!("sdp")));
        assert!(bind_params(&[], &a).values().is_empty());
    }

    #[test]
    fn lazy_bindings_only_run_when_requested() {
        let calls = Cell::new(0);
        let mut a: Available = BTreeMap::new();
        a.insert(
            "controls",
            Binding::Lazy(Box::new(|| {
                calls.set(calls.get() + 1);
                BoundValue::Value(json!({}))
            })),
        );
        bind_params(&names(&["id"]), &a);
        assert_eq!(calls.get(), 0);
        bind_params(&names(&["controls"]), &a);
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn controls_handle_reads_snapshot() {
        let bus = Arc::new(ControlsBus::default());
        bus.set("x", 1.0).unwrap();
        let h = ControlsHandle::new(bus.clone());
        h.set("x", 2.0);
        assert_eq!(h.get("x"), Some(&Scalar::Num(1.0)));
        assert_eq!(bus.get("x"), Some(Scalar::Num(2.0)));
    }
}
