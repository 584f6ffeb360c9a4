//! Interception and rewriting engine for the WebRTC signaling plane.

pub mod category;
pub mod clock;
pub mod cpu;
pub mod engine;
pub mod harness;
pub mod controls;
pub mod http;
pub mod ice;
pub mod media;
pub mod scalar;
pub mod sdp;
pub mod stats;

pub use category::CategoryId;
pub use controls::{ControlEntry, ControlEvent, ControlEventKind, ControlsBus};
pub use scalar::Scalar;
pub use engine::{DispatchOutcome, Engine, EngineSettings, InterceptContext, Payload, TransformSpec};
