use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The intercept surfaces of the signaling and network plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CategoryId {
    Media,
    Devices,
    Session,
    Connect,
    Network,
    Stats,
    Data,
    Socket,
    Request,
    Security,
    Cpu,
}

/// Binding names every category may request.
pub const COMMON_BINDINGS: &[&str] = &["controls"];

impl CategoryId {
    pub const ALL: [CategoryId; 11] = [
        CategoryId::Media,
        CategoryId::Devices,
        CategoryId::Session,
        CategoryId::Connect,
        CategoryId::Network,
        CategoryId::Stats,
        CategoryId::Data,
        CategoryId::Socket,
        CategoryId::Request,
        CategoryId::Security,
        CategoryId::Cpu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryId::Media => "Media",
            CategoryId::Devices => "Devices",
            CategoryId::Session => "Session",
            CategoryId::Connect => "Connect",
            CategoryId::Network => "Network",
            CategoryId::Stats => "Stats",
            CategoryId::Data => "Data",
            CategoryId::Socket => "Socket",
            CategoryId::Request => "Request",
            CategoryId::Security => "Security",
            CategoryId::Cpu => "Cpu",
        }
    }

    /// Category-specific binding names, excluding [`COMMON_BINDINGS`].
    pub fn bindings(self) -> &'static [&'static str] {
        match self {
            CategoryId::Devices => &["devices"],
            CategoryId::Media => &["constraints", "context"],
            CategoryId::Session => &["id", "connection", "session", "context", "data"],
            CategoryId::Connect => &["id", "config", "configuration", "constraints", "data"],
            CategoryId::Network => &["id", "connection", "candidate", "context"],
            CategoryId::Stats => &[
                "id",
                "connection",
                "type",
                "name",
                "args",
                "data",
                "parsequery",
                "query",
                "plot",
                "compress",
                "send",
            ],
            CategoryId::Data => &["id", "connection", "type", "context", "channel", "args", "data"],
            CategoryId::Socket => &["socket", "type", "context", "args", "argos", "data"],
            CategoryId::Request => &["context", "args", "argos", "xhr", "resolve", "reject", "data"],
            CategoryId::Security => &["headers", "context", "data"],
            CategoryId::Cpu => &["details"],
        }
    }

    pub fn allows_binding(self, name: &str) -> bool {
        COMMON_BINDINGS.contains(&name) || self.bindings().contains(&name)
    }

    /// Whether a transform in this category may answer an intercept itself
    /// instead of handing a payload downstream.
    pub fn allows_short_circuit(self) -> bool {
        matches!(
            self,
            CategoryId::Request | CategoryId::Socket | CategoryId::Data
        )
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for CategoryId {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CategoryId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_is_case_insensitive() {
        assert_eq!("session".parse::<CategoryId>().unwrap(), CategoryId::Session);
        assert_eq!("CPU".parse::<CategoryId>().unwrap(), CategoryId::Cpu);
        assert!("Capture".parse::<CategoryId>().is_err());
    }

    #[test]
    fn binding_sets() {
        assert!(CategoryId::Session.allows_binding("session"));
        assert!(CategoryId::Session.allows_binding("controls"));
        assert!(!CategoryId::Session.allows_binding("candidate"));
        assert!(CategoryId::Cpu.allows_binding("details"));
        assert!(!CategoryId::Devices.allows_binding("canvas"));
    }
}
