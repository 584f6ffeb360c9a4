use serde::{Deserialize, Serialize};

use crate::category::CategoryId;
use crate::cpu::CpuSample;
use crate::http::{HeaderDirection, HeaderList, HttpRequest, HttpResponse};
use crate::ice::IceCandidate;
use crate::media::{DeviceInfo, EncodingParams, MediaConstraints, PeerConfig};
use crate::sdp::SessionDescription;
use crate::stats::StatsReport;

/// A signaling or data message as carried on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "encoding", content = "data", rename_all = "lowercase")]
pub enum WireMessage {
    Text(String),
    Binary(Vec<u8>),
}

impl WireMessage {
    pub fn len(&self) -> usize {
        match self {
            WireMessage::Text(s) => s.len(),
            WireMessage::Binary(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            WireMessage::Text(s) => Some(s),
            WireMessage::Binary(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataChannelInit {
    pub label: String,
    #[serde(default = "yes")]
    pub ordered: bool,
}

fn yes() -> bool {
    true
}

/// The value handed to a category transform. Each category accepts a
/// fixed subset of variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Session(SessionDescription),
    Encoding(EncodingParams),
    Candidates(Vec<IceCandidate>),
    Constraints(MediaConstraints),
    Devices(Vec<DeviceInfo>),
    PeerConfig(PeerConfig),
    Stats(StatsReport),
    DataChannel(DataChannelInit),
    Message(WireMessage),
    Url(String),
    HttpRequest(HttpRequest),
    HttpResponse(HttpResponse),
    Headers {
        direction: HeaderDirection,
        headers: HeaderList,
    },
    Cpu(CpuSample),
    /// Short-circuit answer refusing the intercepted call.
    Rejected { reason: String },
}

impl Payload {
    pub fn variant_name(&self) -> &'static str {
        match self {
            Payload::Session(_) => "session",
            Payload::Encoding(_) => "encoding",
            Payload::Candidates(_) => "candidates",
            Payload::Constraints(_) => "constraints",
            Payload::Devices(_) => "devices",
            Payload::PeerConfig(_) => "peer_config",
            Payload::Stats(_) => "stats",
            Payload::DataChannel(_) => "data_channel",
            Payload::Message(_) => "message",
            Payload::Url(_) => "url",
            Payload::HttpRequest(_) => "http_request",
            Payload::HttpResponse(_) => "http_response",
            Payload::Headers { .. } => "headers",
            Payload::Cpu(_) => "cpu",
            Payload::Rejected { .. } => "rejected",
        }
    }

    /// Whether `category` accepts this payload shape.
    pub fn fits(&self, category: CategoryId) -> bool {
        use CategoryId as C;
        matches!(
            (category, self),
            (C::Session, Payload::Session(_) | Payload::Encoding(_))
                | (C::Network, Payload::Candidates(_))
                | (C::Media, Payload::Constraints(_))
                | (C::Devices, Payload::Devices(_))
                | (C::Connect, Payload::PeerConfig(_))
                | (C::Stats, Payload::Stats(_))
                | (C::Data, Payload::DataChannel(_) | Payload::Message(_))
                | (C::Socket, Payload::Url(_) | Payload::Message(_))
                | (
                    C::Request,
                    Payload::HttpRequest(_) | Payload::HttpResponse(_) | Payload::Url(_)
                )
                | (C::Security, Payload::Headers { .. })
                | (C::Cpu, Payload::Cpu(_))
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterceptKind {
    Method,
    Event,
}

impl InterceptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InterceptKind::Method => "method",
            InterceptKind::Event => "event",
        }
    }
}

/// Describes one intercepted call. `state` is loaded from the session's
/// document before the transform runs and written back after it succeeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterceptContext {
    pub context: String,
    pub kind: InterceptKind,
    #[serde(default)]
    pub args: Vec<serde_json::Value>,
    pub session_id: String,
    #[serde(default)]
    pub state: serde_json::Map<String, serde_json::Value>,
}

impl InterceptContext {
    pub fn new(session_id: &str, context: &str, kind: InterceptKind) -> Self {
        InterceptContext {
            context: context.to_string(),
            kind,
            args: Vec::new(),
            session_id: session_id.to_string(),
            state: serde_json::Map::new(),
        }
    }

    pub fn method(session_id: &str, context: &str) -> Self {
        Self::new(session_id, context, InterceptKind::Method)
    }

    pub fn event(session_id: &str, context: &str) -> Self {
        Self::new(session_id, context, InterceptKind::Event)
    }

    pub fn with_args(mut self, args: Vec<serde_json::Value>) -> Self {
        self.args = args;
        self
    }
}

/// What a transform did with its payload.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformResult {
    Unchanged,
    Modified(Payload),
    ShortCircuit(Payload),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{builtin}: {message}")]
pub struct TransformError {
    pub builtin: String,
    pub message: String,
}

impl TransformError {
    pub fn new(builtin: &str, message: impl Into<String>) -> Self {
        TransformError {
            builtin: builtin.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DispatchOutcome {
    PassThrough(Payload),
    Modified(Payload),
    ShortCircuit(Payload),
    /// The transform failed; `payload` is the original, untouched.
    Fail { error: TransformError, payload: Payload },
}

impl DispatchOutcome {
    /// The payload that continues downstream, or the short-circuit answer.
    pub fn payload(&self) -> &Payload {
        match self {
            DispatchOutcome::PassThrough(p)
            | DispatchOutcome::Modified(p)
            | DispatchOutcome::ShortCircuit(p)
            | DispatchOutcome::Fail { payload: p, .. } => p,
        }
    }

    pub fn into_payload(self) -> Payload {
        match self {
            DispatchOutcome::PassThrough(p)
            | DispatchOutcome::Modified(p)
            | DispatchOutcome::ShortCircuit(p)
            | DispatchOutcome::Fail { payload: p, .. } => p,
        }
    }

    pub fn is_short_circuit(&self) -> bool {
        matches!(self, DispatchOutcome::ShortCircuit(_))
    }

    pub fn is_modified(&self) -> bool {
        matches!(self, DispatchOutcome::Modified(_))
    }

    pub fn failure(&self) -> Option<&TransformError> {
        match self {
            DispatchOutcome::Fail { error, .. } => Some(error),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DispatchOutcome::PassThrough(_) => "pass_through",
            DispatchOutcome::Modified(_) => "modified",
            DispatchOutcome::ShortCircuit(_) => "short_circuit",
            DispatchOutcome::Fail { .. } => "fail",
        }
    }
}
