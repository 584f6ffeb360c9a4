//! Category registry, transform installation and the dispatch pipeline.
//!
//! Each category has at most one active transform. Dispatch takes a
//! snapshot of the active transform, holds the session's lock for the
//! whole call and never propagates a transform error: the original payload
//! goes downstream instead.

mod bind;
pub mod builtins;
mod catalog;
mod payload;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use bind::{bind_params, Available, Binding, BoundParams, BoundValue, ControlsHandle};
pub use catalog::{
    validate_params, Catalog, CatalogEntry, EntrySource, ManifestEntry, ParamSpec, ParamType, Params,
    RegisterError, TransformFactory,
};
pub use payload::{
    DataChannelInit, DispatchOutcome, InterceptContext, InterceptKind, Payload, TransformError,
    TransformResult, WireMessage,
};

use crate::category::CategoryId;
use crate::clock::{Clock, SystemClock};
use crate::controls::ControlsBus;
use crate::scalar::Scalar;
use crate::stats::DEFAULT_STATS_INTERVAL_MS;

/// Compiled transform code behind a catalog entry.
pub trait Transform: Send + Sync {
    fn apply(&self, call: &mut TransformCall<'_>, payload: Payload) -> Result<TransformResult, TransformError>;
}

/// Everything a transform sees besides its payload.
pub struct TransformCall<'a> {
    pub category: CategoryId,
    pub ctx: &'a mut InterceptContext,
    pub bound: &'a BoundParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub category: CategoryId,
    pub builtin: String,
    #[serde(default)]
    pub params: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub requested: Vec<String>,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl TransformSpec {
    pub fn new(category: CategoryId, builtin: &str) -> Self {
        TransformSpec {
            category,
            builtin: builtin.to_string(),
            params: BTreeMap::new(),
            requested: Vec::new(),
            enabled: true,
        }
    }

    pub fn param(mut self, name: &str, value: impl Into<Scalar>) -> Self {
        self.params.insert(name.to_string(), value.into());
        self
    }

    pub fn request(mut self, names: &[&str]) -> Self {
        self.requested = names.iter().map(|n| n.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineSettings {
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "interval_default")]
    pub stats_interval_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub savestats_sink: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn interval_default() -> u64 {
    DEFAULT_STATS_INTERVAL_MS
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            strict: false,
            stats_interval_ms: DEFAULT_STATS_INTERVAL_MS,
            savestats_sink: None,
            seed: None,
        }
    }
}

pub const MIN_STATS_INTERVAL_MS: u64 = 100;

impl EngineSettings {
    pub fn validate(&self) -> Result<(), SettingsError> {
        if self.stats_interval_ms < MIN_STATS_INTERVAL_MS {
            return Err(SettingsError::IntervalTooShort(self.stats_interval_ms));
        }
        if let Some(sink) = &self.savestats_sink {
            if !(sink.starts_with("http://") || sink.starts_with("https://")) || sink.len() < 9 {
                return Err(SettingsError::InvalidSink(sink.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SettingsError {
    #[error("stats_interval_ms must be at least {MIN_STATS_INTERVAL_MS}, got {0}")]
    IntervalTooShort(u64),
    #[error("savestats_sink must be an http(s) URL, got `{0}`")]
    InvalidSink(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstallError {
    #[error("no builtin `{name}` in category {category}")]
    UnknownBuiltin { category: CategoryId, name: String },
    #[error("invalid params for `{name}`: {reason}")]
    InvalidParams { name: String, reason: String },
    #[error("`{0}` is not strict-safe")]
    StrictViolation(String),
    #[error("binding `{binding}` is not available to {category}")]
    UnknownBinding { category: CategoryId, binding: String },
    #[error("spec is for {spec}, not {target}")]
    CategoryMismatch { target: CategoryId, spec: CategoryId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformHandle {
    pub id: u64,
    pub category: CategoryId,
    pub builtin: String,
}

struct Installed {
    handle: TransformHandle,
    spec: TransformSpec,
    params: Params,
    strict_safe: bool,
    transform: Arc<dyn Transform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveTransform {
    pub handle: TransformHandle,
    pub spec: TransformSpec,
    pub strict_safe: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub t_ms: u64,
    pub category: CategoryId,
    pub session_id: String,
    pub context: String,
    pub error: TransformError,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounters {
    pub dispatched: u64,
    pub modified: u64,
    pub short_circuited: u64,
    pub failed: u64,
}

pub const FAILURE_LOG_CAPACITY: usize = 256;

/// Name of the trigger fired on the controls bus when a category's
/// transform changes. The payload is the new builtin name, or empty after
/// an uninstall.
pub fn category_event_name(category: CategoryId) -> String {
    format!("category.{}", category.as_str())
}

type SessionState = serde_json::Map<String, serde_json::Value>;

pub struct Engine {
    catalog: RwLock<Catalog>,
    active: RwLock<HashMap<CategoryId, Arc<Installed>>>,
    settings: RwLock<EngineSettings>,
    controls: Arc<ControlsBus>,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
    failures: Mutex<VecDeque<FailureRecord>>,
    counters: Mutex<BTreeMap<CategoryId, CategoryCounters>>,
    next_handle: AtomicU64,
}

impl Default for Engine {
    fn default() -> Self {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        Engine::new(
            Catalog::with_builtins(),
            EngineSettings::default(),
            Arc::new(ControlsBus::new(clock.clone())),
            clock,
        )
    }
}

impl Engine {
    pub fn new(catalog: Catalog, settings: EngineSettings, controls: Arc<ControlsBus>, clock: Arc<dyn Clock>) -> Self {
        Engine {
            catalog: RwLock::new(catalog),
            active: RwLock::new(HashMap::new()),
            settings: RwLock::new(settings),
            controls,
            clock,
            sessions: Mutex::new(HashMap::new()),
            failures: Mutex::new(VecDeque::new()),
            counters: Mutex::new(BTreeMap::new()),
            next_handle: AtomicU64::new(1),
        }
    }

    pub fn with_settings(settings: EngineSettings) -> Self {
        let e = Engine::default();
        *e.settings.write() = settings;
        e
    }

    pub fn controls(&self) -> &Arc<ControlsBus> {
        &self.controls
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn settings(&self) -> EngineSettings {
        self.settings.read().clone()
    }

    pub fn seed(&self) -> u64 {
        self.settings.read().seed.unwrap_or(0)
    }

    /// Replaces the settings. Turning strict mode on removes any active
    /// transform that is not strict-safe; the removed categories are
    /// returned.
    pub fn set_settings(&self, settings: EngineSettings) -> Result<Vec<CategoryId>, SettingsError> {
        settings.validate()?;
        let strict = settings.strict;
        let mut active = self.active.write();
        *self.settings.write() = settings;
        let mut removed = Vec::new();
        if strict {
            active.retain(|cat, inst| {
                if inst.strict_safe {
                    true
                } else {
                    removed.push(*cat);
                    false
                }
            });
        }
        drop(active);
        removed.sort();
        for cat in &removed {
            tracing::info!(category = %cat, "removed non-strict-safe transform");
            self.controls.trigger(&category_event_name(*cat), "");
        }
        Ok(removed)
    }

    pub fn catalog_manifest(&self) -> Vec<ManifestEntry> {
        self.catalog.read().manifest()
    }

    pub fn register_plugin(
        &self,
        category: CategoryId,
        name: &str,
        description: &str,
        params: Vec<ParamSpec>,
        factory: TransformFactory,
    ) -> Result<(), RegisterError> {
        self.catalog
            .write()
            .register_plugin(category, name, description, params, factory)
    }

    /// Builtins that may be installed under the current settings.
    pub fn installable(&self) -> Vec<(CategoryId, String)> {
        let strict = self.settings.read().strict;
        self.catalog
            .read()
            .entries()
            .filter(|e| !strict || e.strict_safe)
            .map(|e| (e.category, e.name.clone()))
            .collect()
    }

    pub fn install_transform(&self, category: CategoryId, spec: TransformSpec) -> Result<TransformHandle, InstallError> {
        if spec.category != category {
            return Err(InstallError::CategoryMismatch {
                target: category,
                spec: spec.category,
            });
        }
        let entry = self
            .catalog
            .read()
            .get(category, &spec.builtin)
            .cloned()
            .ok_or_else(|| InstallError::UnknownBuiltin {
                category,
                name: spec.builtin.clone(),
            })?;
        if let Some(b) = spec.requested.iter().find(|b| !category.allows_binding(b)) {
            return Err(InstallError::UnknownBinding {
                category,
                binding: b.clone(),
            });
        }
        let params = validate_params(&entry.params, &spec.params).map_err(|reason| InstallError::InvalidParams {
            name: entry.name.clone(),
            reason,
        })?;
        let transform = (entry.factory)(&params).map_err(|reason| InstallError::InvalidParams {
            name: entry.name.clone(),
            reason,
        })?;
        let mut spec = spec;
        if spec.requested.is_empty() {
            spec.requested = entry.default_bindings.clone();
        }
        let handle = TransformHandle {
            id: self.next_handle.fetch_add(1, Ordering::Relaxed),
            category,
            builtin: entry.name.clone(),
        };
        let installed = Arc::new(Installed {
            handle: handle.clone(),
            spec,
            params,
            strict_safe: entry.strict_safe,
            transform,
        });
        {
            // strict is checked under the registry lock so a concurrent
            // switch to strict mode cannot let this one slip in
            let mut active = self.active.write();
            if self.settings.read().strict && !entry.strict_safe {
                return Err(InstallError::StrictViolation(entry.name));
            }
            active.insert(category, installed);
        }
        self.controls.trigger(&category_event_name(category), entry.name.as_str());
        Ok(handle)
    }

    pub fn uninstall_transform(&self, category: CategoryId) -> bool {
        let removed = self.active.write().remove(&category).is_some();
        if removed {
            self.controls.trigger(&category_event_name(category), "");
        }
        removed
    }

    pub fn active(&self, category: CategoryId) -> Option<ActiveTransform> {
        self.active.read().get(&category).map(|i| ActiveTransform {
            handle: i.handle.clone(),
            spec: i.spec.clone(),
            strict_safe: i.strict_safe,
        })
    }

    pub fn active_all(&self) -> Vec<ActiveTransform> {
        let mut out: Vec<_> = CategoryId::ALL.iter().filter_map(|c| self.active(*c)).collect();
        out.sort_by_key(|a| a.handle.category);
        out
    }

    /// Validated params of the active transform for `category`.
    pub fn active_params(&self, category: CategoryId) -> Option<Params> {
        self.active.read().get(&category).map(|i| i.params.clone())
    }

    /// Polling interval for stats: the active Stats transform's
    /// `interval_ms` param when set, otherwise the engine setting.
    pub fn stats_interval_ms(&self) -> u64 {
        self.active_params(CategoryId::Stats)
            .and_then(|p| p.f64("interval_ms"))
            .map(|v| v as u64)
            .unwrap_or_else(|| self.settings.read().stats_interval_ms)
    }

    pub fn failures(&self) -> Vec<FailureRecord> {
        self.failures.lock().iter().cloned().collect()
    }

    pub fn counters(&self) -> BTreeMap<CategoryId, CategoryCounters> {
        self.counters.lock().clone()
    }

    /// A copy of a session's state document.
    pub fn session_state(&self, session_id: &str) -> SessionState {
        self.sessions
            .lock()
            .get(session_id)
            .map(|s| s.lock().clone())
            .unwrap_or_default()
    }

    pub fn drop_session(&self, session_id: &str) {
        self.sessions.lock().remove(session_id);
    }

    fn session_lock(&self, session_id: &str) -> Arc<Mutex<SessionState>> {
        self.sessions
            .lock()
            .entry(session_id.to_string())
            .or_default()
            .clone()
    }

    fn record_failure(&self, category: CategoryId, ctx: &InterceptContext, error: &TransformError) {
        tracing::warn!(category = %category, session = %ctx.session_id, error = %error, "transform failed");
        let mut log = self.failures.lock();
        if log.len() == FAILURE_LOG_CAPACITY {
            log.pop_front();
        }
        log.push_back(FailureRecord {
            t_ms: self.clock.now_ms(),
            category,
            session_id: ctx.session_id.clone(),
            context: ctx.context.clone(),
            error: error.clone(),
        });
    }

    pub fn dispatch(&self, category: CategoryId, ctx: &mut InterceptContext, payload: Payload) -> DispatchOutcome {
        let installed = self.active.read().get(&category).cloned();
        let outcome = match installed {
            Some(inst) if inst.spec.enabled => self.run(category, &inst, ctx, payload),
            _ => DispatchOutcome::PassThrough(payload),
        };
        let mut counters = self.counters.lock();
        let c = counters.entry(category).or_default();
        c.dispatched += 1;
        match &outcome {
            DispatchOutcome::Modified(_) => c.modified += 1,
            DispatchOutcome::ShortCircuit(_) => c.short_circuited += 1,
            DispatchOutcome::Fail { .. } => c.failed += 1,
            DispatchOutcome::PassThrough(_) => {}
        }
        outcome
    }

    fn run(&self, category: CategoryId, inst: &Installed, ctx: &mut InterceptContext, payload: Payload) -> DispatchOutcome {
        let builtin = inst.handle.builtin.as_str();
        let fail = |engine: &Engine, ctx: &InterceptContext, payload, message: String| {
            let error = TransformError::new(builtin, message);
            engine.record_failure(category, ctx, &error);
            DispatchOutcome::Fail { error, payload }
        };
        if !payload.fits(category) {
            let msg = format!("{category} does not accept a {} payload", payload.variant_name());
            return fail(self, ctx, payload, msg);
        }
        let session = self.session_lock(&ctx.session_id);
        let mut state = session.lock();
        ctx.state = state.clone();

        let bound = {
            let ctx_ref: &InterceptContext = ctx;
            let available = bind::available_for(category, ctx_ref, &payload, &self.controls);
            bind_params(&inst.spec.requested, &available)
        };
        let mut call = TransformCall {
            category,
            ctx,
            bound: &bound,
            seed: self.seed(),
        };
        let input = payload.clone();
        let result = catch_unwind(AssertUnwindSafe(|| inst.transform.apply(&mut call, input)));
        let result = match result {
            Ok(r) => r,
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "transform panicked".into());
                Err(TransformError::new(builtin, format!("panic: {msg}")))
            }
        };
        match result {
            Err(error) => {
                drop(state);
                self.record_failure(category, ctx, &error);
                DispatchOutcome::Fail { error, payload }
            }
            Ok(TransformResult::ShortCircuit(_)) if !category.allows_short_circuit() => {
                drop(state);
                fail(self, ctx, payload, format!("{category} cannot short-circuit"))
            }
            Ok(TransformResult::Modified(p)) if !p.fits(category) => {
                drop(state);
                let msg = format!("returned a {} payload", p.variant_name());
                fail(self, ctx, payload, msg)
            }
            Ok(result) => {
                *state = ctx.state.clone();
                match result {
                    TransformResult::Unchanged => DispatchOutcome::PassThrough(payload),
                    TransformResult::Modified(p) if p == payload => DispatchOutcome::PassThrough(payload),
                    TransformResult::Modified(p) => DispatchOutcome::Modified(p),
                    TransformResult::ShortCircuit(p) => DispatchOutcome::ShortCircuit(p),
                }
            }
        }
    }
}
