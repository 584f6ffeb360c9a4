//! Service configuration: one JSON document, validated in full before
//! anything starts.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use rtcshim_core::cpu::DEFAULT_CPU_SAMPLE_PERIOD_MS;
use rtcshim_core::harness::{CodecSet, EndpointConfig, NetworkModel};
use rtcshim_core::{CategoryId, Engine, EngineSettings, Scalar, TransformSpec};
use rtcshim_proxy::ProxyConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ADMIN_ADDR: &str = "127.0.0.1:8080";
pub const MIN_CPU_PERIOD_MS: u64 = 100;

pub const ENV_ADMIN_ADDR: &str = "RTCSHIM_ADMIN_ADDR";
pub const ENV_PROXY_ADDR: &str = "RTCSHIM_PROXY_ADDR";
pub const ENV_SEED: &str = "RTCSHIM_SEED";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl ToString) -> Self {
        ConfigError {
            field: field.into(),
            reason: reason.to_string(),
        }
    }
}

/// A transform selection for one category; the category comes from the
/// enclosing key or URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub builtin: String,
    #[serde(default)]
    pub params: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub requested: Vec<String>,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

impl CategorySpec {
    pub fn into_spec(self, category: CategoryId) -> TransformSpec {
        TransformSpec {
            category,
            builtin: self.builtin,
            params: self.params,
            requested: self.requested,
            enabled: self.enabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminConfig {
    #[serde(default = "default_admin")]
    pub listen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    /// Directory with the built control panel, served under `/panel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel_dir: Option<PathBuf>,
}

fn default_admin() -> String {
    DEFAULT_ADMIN_ADDR.to_string()
}

impl Default for AdminConfig {
    fn default() -> Self {
        AdminConfig {
            listen: default_admin(),
            token: None,
            panel_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuMonitorConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_period")]
    pub period_ms: u64,
}

fn default_period() -> u64 {
    DEFAULT_CPU_SAMPLE_PERIOD_MS
}

impl Default for CpuMonitorConfig {
    fn default() -> Self {
        CpuMonitorConfig {
            enabled: true,
            period_ms: DEFAULT_CPU_SAMPLE_PERIOD_MS,
        }
    }
}

/// Defaults filled into scenario endpoints that leave them out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codecs: Option<CodecSet>,
}

impl HarnessDefaults {
    /// Inserts `network` and `codecs` into endpoint objects of a scenario
    /// document that do not set them.
    pub fn apply_to_scenario(&self, doc: &mut serde_json::Value) {
        let Some(endpoints) = doc.get_mut("endpoints").and_then(|e| e.as_array_mut()) else {
            return;
        };
        for ep in endpoints.iter_mut().filter_map(|e| e.as_object_mut()) {
            if let Some(n) = &self.network {
                ep.entry("network").or_insert_with(|| serde_json::to_value(n).unwrap());
            }
            if let Some(c) = &self.codecs {
                ep.entry("codecs").or_insert_with(|| serde_json::to_value(c).unwrap());
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub settings: EngineSettings,
    #[serde(default)]
    pub categories: BTreeMap<CategoryId, CategorySpec>,
    #[serde(default)]
    pub controls_initial: BTreeMap<String, Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<ProxyConfig>,
    #[serde(default)]
    pub harness: HarnessDefaults,
    #[serde(default)]
    pub admin: AdminConfig,
    #[serde(default)]
    pub cpu_monitor: CpuMonitorConfig,
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("config", e))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Applies `RTCSHIM_ADMIN_ADDR`, `RTCSHIM_PROXY_ADDR` and `RTCSHIM_SEED`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(addr) = lookup(ENV_ADMIN_ADDR) {
            self.admin.listen = addr;
        }
        if let Some(addr) = lookup(ENV_PROXY_ADDR) {
            match &mut self.proxy {
                Some(p) => p.listen = addr,
                None => return Err(ConfigError::new(ENV_PROXY_ADDR, "set but the config has no proxy section")),
            }
        }
        if let Some(seed) = lookup(ENV_SEED) {
            let seed = seed
                .trim()
                .parse::<u64>()
                .map_err(|e| ConfigError::new(ENV_SEED, format!("`{seed}`: {e}")))?;
            self.settings.seed = Some(seed);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.settings.validate().map_err(|e| ConfigError::new("settings", e))?;

        let scratch = Engine::with_settings(self.settings.clone());
        for (cat, spec) in &self.categories {
            install(&scratch, *cat, spec.clone()).map_err(|e| ConfigError::new(format!("categories.{cat}"), e))?;
        }
        for (name, value) in &self.controls_initial {
            scratch
                .controls()
                .set(name, value.clone())
                .map_err(|e| ConfigError::new(format!("controls_initial.{name}"), e))?;
        }

        if let Some(proxy) = &self.proxy {
            proxy.validate().map_err(|e| ConfigError::new("proxy", e))?;
        }

        let mut probe = EndpointConfig::new("defaults");
        if let Some(n) = &self.harness.network {
            n.validate().map_err(|e| ConfigError::new("harness.network", e))?;
            probe.network = n.clone();
        }
        if let Some(c) = &self.harness.codecs {
            probe.codecs = c.clone();
        }
        probe.validate().map_err(|e| ConfigError::new("harness", e))?;

        let admin: SocketAddr = self
            .admin
            .listen
            .parse()
            .map_err(|_| ConfigError::new("admin.listen", format!("`{}` is not a socket address", self.admin.listen)))?;
        if let Some(proxy) = &self.proxy {
            if proxy.listen.parse::<SocketAddr>().ok() == Some(admin) && admin.port() != 0 {
                return Err(ConfigError::new("admin.listen", "same address as proxy.listen"));
            }
        }
        if let Some(token) = &self.admin.token {
            if token.trim().is_empty() || token.chars().any(char::is_whitespace) {
                return Err(ConfigError::new("admin.token", "must be non-empty without whitespace"));
            }
        }
        if let Some(dir) = &self.admin.panel_dir {
            if !dir.is_dir() {
                return Err(ConfigError::new("admin.panel_dir", format!("{} is not a directory", dir.display())));
            }
        }
        if self.cpu_monitor.period_ms < MIN_CPU_PERIOD_MS {
            return Err(ConfigError::new(
                "cpu_monitor.period_ms",
                format!("must be at least {MIN_CPU_PERIOD_MS}, got {}", self.cpu_monitor.period_ms),
            ));
        }
        Ok(())
    }
}

/// The single install path shared by config loading and the admin API.
pub fn install(
    engine: &Engine,
    category: CategoryId,
    spec: CategorySpec,
) -> Result<rtcshim_core::engine::TransformHandle, rtcshim_core::engine::InstallError> {
    engine.install_transform(category, spec.into_spec(category))
}
