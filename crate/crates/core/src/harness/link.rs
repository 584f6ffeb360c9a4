use serde::{Deserialize, Serialize};

use crate::engine::WireMessage;

/// What endpoints exchange over the signaling channel. Data-channel
/// traffic rides the same link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalMessage {
    Offer { sdp: String },
    Answer { sdp: String },
    Candidate { candidate: String },
    Data { label: String, message: WireMessage },
    Bye,
}

impl SignalMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            SignalMessage::Offer { .. } => "offer",
            SignalMessage::Answer { .. } => "answer",
            SignalMessage::Candidate { .. } => "candidate",
            SignalMessage::Data { .. } => "data",
            SignalMessage::Bye => "bye",
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("signal messages serialize")
    }

    pub fn from_text(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("signaling link: {0}")]
pub struct LinkError(pub String);

/// Carries a message from one endpoint to another. `Ok(None)` means the
/// link swallowed it.
pub trait SignalingLink: Send {
    fn deliver(&mut self, from: &str, to: &str, msg: SignalMessage) -> Result<Option<SignalMessage>, LinkError>;

    fn close(&mut self) {}
}

/// Hands every message straight to the recipient.
#[derive(Debug, Default)]
pub struct DirectLink;

impl SignalingLink for DirectLink {
    fn deliver(&mut self, _from: &str, _to: &str, msg: SignalMessage) -> Result<Option<SignalMessage>, LinkError> {
        Ok(Some(msg))
    }
}
