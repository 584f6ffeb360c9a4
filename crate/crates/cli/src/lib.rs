//! Service runner behind the `rtcshim` binary: config, admin API, CPU
//! monitor and the one-shot commands.

pub mod admin;
pub mod commands;
pub mod config;
pub mod cpu;
pub mod service;

pub use config::{ConfigError, EngineConfig};
pub use service::Service;
