//! Signaling-plane man-in-the-middle: WebSocket and HTTP proxying through
//! the Socket, Request and Security categories, with seeded fault injection.

pub mod fault;
pub mod http;
pub mod link;
pub mod pipeline;
pub mod record;
pub mod server;
mod ws;

pub use fault::{DelaySpec, FakeResponseRule, FaultEffect, FaultEffectKind, FaultPolicy, UrlRewrite};
pub use pipeline::{SessionPipeline, Verdict};
pub use record::{
    Direction, Disposition, MessageRecord, ProxySession, SequenceExport, SessionCounters, SessionRegistry,
    TimeRange, UnknownSession, DEFAULT_RING_CAPACITY,
};
pub use rtcshim_core::http::{HeaderAction, HeaderDirection, HeaderRule};
pub use server::{Proxy, ProxyConfig, ProxyConfigError, TlsPaths};
pub use link::ProxiedLink;
pub use ws::{CLOSE_BLOCKED, CLOSE_BY_CONTROL, CLOSE_DEADLINE, CLOSE_TRIGGER, CLOSE_UPSTREAM_FAILED};
