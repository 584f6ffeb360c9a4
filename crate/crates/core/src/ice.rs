//! ICE candidate model, address classification and signaling-side filtering.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Udp,
    Tcp,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Udp => "udp",
            Transport::Tcp => "tcp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateType {
    Host,
    Srflx,
    Prflx,
    Relay,
}

impl CandidateType {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateType::Host => "host",
            CandidateType::Srflx => "srflx",
            CandidateType::Prflx => "prflx",
            CandidateType::Relay => "relay",
        }
    }

    /// Recommended type preference used in candidate priorities.
    pub fn type_preference(self) -> u32 {
        match self {
            CandidateType::Host => 126,
            CandidateType::Prflx => 110,
            CandidateType::Srflx => 100,
            CandidateType::Relay => 0,
        }
    }
}

impl FromStr for CandidateType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "host" => Ok(CandidateType::Host),
            "srflx" => Ok(CandidateType::Srflx),
            "prflx" => Ok(CandidateType::Prflx),
            "relay" => Ok(CandidateType::Relay),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressClass {
    Ipv4Public,
    Ipv4Private,
    Ipv6,
    MdnsHostname,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CandidateError {
    #[error("malformed candidate `{line}`: {reason}")]
    MalformedCandidate { line: String, reason: &'static str },
    #[error("invalid address `{0}`")]
    InvalidAddress(String),
}

/// One ICE transport candidate. Equality ignores `raw`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IceCandidate {
    pub foundation: String,
    pub component: u16,
    pub transport: Transport,
    pub priority: u32,
    pub address: String,
    pub port: u16,
    pub cand_type: CandidateType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related_address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related_port: Option<u16>,
    /// Trailing `name value` pairs such as `generation 0` or `tcptype active`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extensions: Vec<(String, String)>,
    /// The line this candidate was parsed from.
    #[serde(default)]
    pub raw: String,
}

impl PartialEq for IceCandidate {
    fn eq(&self, other: &Self) -> bool {
        self.foundation == other.foundation
            && self.component == other.component
            && self.transport == other.transport
            && self.priority == other.priority
            && self.address == other.address
            && self.port == other.port
            && self.cand_type == other.cand_type
            && self.related_address == other.related_address
            && self.related_port == other.related_port
            && self.extensions == other.extensions
    }
}

impl IceCandidate {
    /// Builds a candidate with a standard priority for the given type.
    pub fn new(
        foundation: &str,
        component: u16,
        transport: Transport,
        address: &str,
        port: u16,
        cand_type: CandidateType,
    ) -> Self {
        let mut c = IceCandidate {
            foundation: foundation.to_string(),
            component,
            transport,
            priority: candidate_priority(cand_type, 65535, component),
            address: address.to_string(),
            port,
            cand_type,
            related_address: None,
            related_port: None,
            extensions: Vec::new(),
            raw: String::new(),
        };
        c.raw = serialize_candidate(&c);
        c
    }

    pub fn with_related(mut self, address: &str, port: u16) -> Self {
        self.related_address = Some(address.to_string());
        self.related_port = Some(port);
        self.raw = serialize_candidate(&self);
        self
    }

    pub fn address_class(&self) -> Option<AddressClass> {
        classify_address(&self.address).ok()
    }
}

impl fmt::Display for IceCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_candidate(self))
    }
}

/// `(2^24)*type_pref + (2^8)*local_pref + (256 - component)`.
pub fn candidate_priority(cand_type: CandidateType, local_pref: u32, component: u16) -> u32 {
    (cand_type.type_preference() << 24) + ((local_pref & 0xffff) << 8) + (256 - component as u32)
}

fn malformed(line: &str, reason: &'static str) -> CandidateError {
    CandidateError::MalformedCandidate {
        line: line.to_string(),
        reason,
    }
}

/// Parses a candidate attribute, with or without a leading `a=`.
pub fn parse_candidate(line: &str) -> Result<IceCandidate, CandidateError> {
    let raw = line.trim_end_matches(['\r', '\n']);
    let body = raw.strip_prefix("a=").unwrap_or(raw);
    let body = body
        .strip_prefix("candidate:")
        .ok_or_else(|| malformed(raw, "missing `candidate:` prefix"))?;
    let tokens: Vec<&str> = body.split_ascii_whitespace().collect();
    if tokens.len() < 8 {
        return Err(malformed(raw, "too few fields"));
    }
    if tokens[6] != "typ" {
        return Err(malformed(raw, "expected `typ`"));
    }
    let component = tokens[1]
        .parse::<u16>()
        .ok()
        .filter(|c| (1..=256).contains(c))
        .ok_or_else(|| malformed(raw, "bad component"))?;
    let transport = match tokens[2].to_ascii_lowercase().as_str() {
        "udp" => Transport::Udp,
        "tcp" => Transport::Tcp,
        _ => return Err(malformed(raw, "bad transport")),
    };
    let priority = tokens[3]
        .parse::<u32>()
        .map_err(|_| malformed(raw, "bad priority"))?;
    let address = tokens[4];
    if !is_valid_address(address) {
        return Err(malformed(raw, "bad address"));
    }
    let port = tokens[5]
        .parse::<u16>()
        .map_err(|_| malformed(raw, "bad port"))?;
    let cand_type = tokens[7]
        .parse::<CandidateType>()
        .map_err(|_| malformed(raw, "bad candidate type"))?;

    let rest = &tokens[8..];
    if !rest.len().is_multiple_of(2) {
        return Err(malformed(raw, "dangling extension attribute"));
    }
    let mut related_address = None;
    let mut related_port = None;
    let mut extensions = Vec::new();
    for pair in rest.chunks(2) {
        match pair[0] {
            "raddr" => related_address = Some(pair[1].to_string()),
            "rport" => {
                related_port = Some(
                    pair[1]
                        .parse::<u16>()
                        .map_err(|_| malformed(raw, "bad rport"))?,
                )
            }
            name => extensions.push((name.to_string(), pair[1].to_string())),
        }
    }

    Ok(IceCandidate {
        foundation: tokens[0].to_string(),
        component,
        transport,
        priority,
        address: address.to_string(),
        port,
        cand_type,
        related_address,
        related_port,
        extensions,
        raw: raw.to_string(),
    })
}

/// Canonical `candidate:` attribute value (no `a=` prefix).
pub fn serialize_candidate(c: &IceCandidate) -> String {
    let mut out = format!(
        "candidate:{} {} {} {} {} {} typ {}",
        c.foundation,
        c.component,
        c.transport.as_str(),
        c.priority,
        c.address,
        c.port,
        c.cand_type.as_str()
    );
    if let Some(addr) = &c.related_address {
        out.push_str(" raddr ");
        out.push_str(addr);
    }
    if let Some(port) = c.related_port {
        out.push_str(&format!(" rport {port}"));
    }
    for (k, v) in &c.extensions {
        out.push(' ');
        out.push_str(k);
        out.push(' ');
        out.push_str(v);
    }
    out
}

fn is_valid_hostname(s: &str) -> bool {
    if s.is_empty() || s.len() > 253 {
        return false;
    }
    let labels: Vec<&str> = s.trim_end_matches('.').split('.').collect();
    let well_formed = labels.iter().all(|l| {
        !l.is_empty()
            && l.len() <= 63
            && l.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
            && !l.starts_with('-')
            && !l.ends_with('-')
    });
    // a dotted all-numeric name is a broken IPv4 literal, not a hostname
    well_formed && !labels.iter().all(|l| l.bytes().all(|b| b.is_ascii_digit()))
}

fn is_valid_address(s: &str) -> bool {
    s.parse::<Ipv4Addr>().is_ok() || s.parse::<Ipv6Addr>().is_ok() || is_valid_hostname(s)
}

/// Classifies a candidate address. Private means the RFC 1918 blocks;
/// hostnames other than `.local` names have no class.
pub fn classify_address(address: &str) -> Result<AddressClass, CandidateError> {
    if let Ok(v4) = address.parse::<Ipv4Addr>() {
        return Ok(if is_rfc1918(v4) {
            AddressClass::Ipv4Private
        } else {
            AddressClass::Ipv4Public
        });
    }
    if address.parse::<Ipv6Addr>().is_ok() {
        return Ok(AddressClass::Ipv6);
    }
    if is_valid_hostname(address)
        && address
            .trim_end_matches('.')
            .to_ascii_lowercase()
            .ends_with(".local")
    {
        return Ok(AddressClass::MdnsHostname);
    }
    Err(CandidateError::InvalidAddress(address.to_string()))
}

fn is_rfc1918(ip: Ipv4Addr) -> bool {
    let [a, b, ..] = ip.octets();
    a == 10 || (a == 172 && (16..=31).contains(&b)) || (a == 192 && b == 168)
}

/// Which candidates may be signaled to the remote side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidatePolicy {
    pub drop_ipv6: bool,
    pub drop_private: bool,
    pub relay_only: bool,
    pub drop_host: bool,
}

impl CandidatePolicy {
    pub fn admits(&self, c: &IceCandidate) -> bool {
        if self.relay_only && c.cand_type != CandidateType::Relay {
            return false;
        }
        if self.drop_host && c.cand_type == CandidateType::Host {
            return false;
        }
        match c.address_class() {
            Some(AddressClass::Ipv6) if self.drop_ipv6 => false,
            Some(AddressClass::Ipv4Private) if self.drop_private => false,
            _ => true,
        }
    }
}

pub fn filter_candidates(list: &[IceCandidate], policy: &CandidatePolicy) -> Vec<IceCandidate> {
    list.iter().filter(|c| policy.admits(c)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_host_candidate() {
        let c = parse_candidate("candidate:1 1 udp 2122260223 192.168.1.2 54321 typ host").unwrap();
        assert_eq!(c.cand_type, CandidateType::Host);
        assert_eq!(c.address, "192.168.1.2");
        assert_eq!(c.port, 54321);
        assert_eq!(c.priority, 2122260223);
        assert_eq!(c.component, 1);
        assert_eq!(c.transport, Transport::Udp);
        assert_eq!(c.foundation, "1");
    }

    #[test]
    fn round_trip_with_related_and_extensions() {
        let line = "candidate:842163049 1 udp 1677729535 203.0.113.7 46154 typ srflx raddr 192.168.1.2 rport 54321 generation 0 ufrag EsAw network-cost 999";
        let c = parse_candidate(&format!("a={line}")).unwrap();
        assert_eq!(c.related_address.as_deref(), Some("192.168.1.2"));
        assert_eq!(c.related_port, Some(54321));
        assert_eq!(c.extensions.len(), 3);
        assert_eq!(serialize_candidate(&c), line);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            parse_candidate("candidate:garbage"),
            Err(CandidateError::MalformedCandidate { .. })
        ));
        assert!(parse_candidate("candidate:1 1 udp 1 1.2.3.4 5 typx host").is_err());
        assert!(parse_candidate("candidate:1 1 sctp 1 1.2.3.4 5 typ host").is_err());
        assert!(parse_candidate("candidate:1 1 udp 1 999.1.1.1 5 typ host").is_err());
        assert!(parse_candidate("candidate:1 1 udp 1 1.2.3.4 5 typ host generation").is_err());
    }

    #[test]
    fn uppercase_transport_is_canonicalized() {
        let c = parse_candidate("candidate:0 1 UDP 2122252543 10.0.0.5 50000 typ host").unwrap();
        assert_eq!(
            serialize_candidate(&c),
            "candidate:0 1 udp 2122252543 10.0.0.5 50000 typ host"
        );
    }

    #[test]
    fn classification() {
        assert_eq!(classify_address("192.168.1.2").unwrap(), AddressClass::Ipv4Private);
        assert_eq!(classify_address("10.1.2.3").unwrap(), AddressClass::Ipv4Private);
        assert_eq!(classify_address("172.16.0.1").unwrap(), AddressClass::Ipv4Private);
        assert_eq!(classify_address("172.31.255.255").unwrap(), AddressClass::Ipv4Private);
        assert_eq!(classify_address("172.32.0.1").unwrap(), AddressClass::Ipv4Public);
        assert_eq!(classify_address("172.15.0.1").unwrap(), AddressClass::Ipv4Public);
        assert_eq!(classify_address("192.169.0.1").unwrap(), AddressClass::Ipv4Public);
        assert_eq!(classify_address("8.8.8.8").unwrap(), AddressClass::Ipv4Public);
        assert_eq!(classify_address("2001:db8::1").unwrap(), AddressClass::Ipv6);
        assert_eq!(
            classify_address("4f2c1e0a-7b1d-4c6e-9f11-2a1d2c3b4e5f.local").unwrap(),
            AddressClass::MdnsHostname
        );
        assert!(classify_address("turn.example.org").is_err());
        assert!(classify_address("not an address").is_err());
    }

    #[test]
    fn priority_formula() {
        assert_eq!(candidate_priority(CandidateType::Host, 65535, 1), 2130706431);
        assert_eq!(candidate_priority(CandidateType::Relay, 65535, 1), 16777215);
    }

    fn cand(t: CandidateType, addr: &str) -> IceCandidate {
        IceCandidate::new("f", 1, Transport::Udp, addr, 5000, t)
    }

    #[test]
    fn policy_examples() {
        let list = vec![
            cand(CandidateType::Host, "192.168.1.2"),
            cand(CandidateType::Srflx, "203.0.113.5"),
            cand(CandidateType::Relay, "198.51.100.9"),
        ];
        let relay = filter_candidates(&list, &CandidatePolicy { relay_only: true, ..Default::default() });
        assert_eq!(relay, vec![list[2].clone()]);

        let hosts = vec![
            cand(CandidateType::Host, "192.168.1.2"),
            cand(CandidateType::Host, "203.0.113.5"),
        ];
        let public = filter_candidates(&hosts, &CandidatePolicy { drop_private: true, ..Default::default() });
        assert_eq!(public, vec![hosts[1].clone()]);

        assert!(filter_candidates(&[], &CandidatePolicy { relay_only: true, ..Default::default() }).is_empty());
    }

    #[test]
    fn relay_only_subsumes_drop_host() {
        let p = CandidatePolicy { relay_only: true, drop_host: false, ..Default::default() };
        assert!(!p.admits(&cand(CandidateType::Host, "203.0.113.5")));
        assert!(!p.admits(&cand(CandidateType::Srflx, "203.0.113.5")));
        assert!(!p.admits(&cand(CandidateType::Prflx, "203.0.113.5")));
    }
}
