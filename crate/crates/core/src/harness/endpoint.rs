use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ice::{candidate_priority, serialize_candidate, CandidateType, IceCandidate, Transport};
use crate::media::{EncodingParams, IceTransportPolicy, MediaConstraints, PeerConfig};
use crate::sdp::{MediaLine, MediaSection, SdpError, SdpType, SessionDescription};

use super::network::NetworkModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSet {
    #[serde(default)]
    pub audio: Vec<String>,
    #[serde(default)]
    pub video: Vec<String>,
}

impl Default for CodecSet {
    fn default() -> Self {
        CodecSet {
            audio: vec!["opus".into(), "PCMU".into()],
            video: vec!["VP8".into(), "H264".into()],
        }
    }
}

impl CodecSet {
    pub fn for_kind(&self, kind: &str) -> &[String] {
        match kind {
            "audio" => &self.audio,
            "video" => &self.video,
            _ => &[],
        }
    }

    pub fn supports(&self, kind: &str, codec: &str) -> bool {
        self.for_kind(kind).iter().any(|c| c.eq_ignore_ascii_case(codec))
    }
}

struct KnownCodec {
    name: &'static str,
    pt: u8,
    clock: u32,
    channels: Option<u8>,
    fmtp: Option<&'static str>,
}

const KNOWN_CODECS: &[KnownCodec] = &[
    KnownCodec { name: "opus", pt: 111, clock: 48000, channels: Some(2), fmtp: Some("minptime=10;useinbandfec=1") },
    KnownCodec { name: "PCMU", pt: 0, clock: 8000, channels: None, fmtp: None },
    KnownCodec { name: "PCMA", pt: 8, clock: 8000, channels: None, fmtp: None },
    KnownCodec { name: "G722", pt: 9, clock: 8000, channels: None, fmtp: None },
    KnownCodec { name: "VP8", pt: 96, clock: 90000, channels: None, fmtp: None },
    KnownCodec { name: "VP9", pt: 98, clock: 90000, channels: None, fmtp: Some("profile-id=0") },
    KnownCodec {
        name: "H264",
        pt: 102,
        clock: 90000,
        channels: None,
        fmtp: Some("level-asymmetry-allowed=1;packetization-mode=1;profile-level-id=42e01f"),
    },
    KnownCodec { name: "AV1", pt: 45, clock: 90000, channels: None, fmtp: None },
];

fn known_codec(name: &str) -> Option<&'static KnownCodec> {
    KNOWN_CODECS.iter().find(|c| c.name.eq_ignore_ascii_case(name))
}

pub fn known_codec_names() -> Vec<&'static str> {
    KNOWN_CODECS.iter().map(|c| c.name).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Caller,
    Callee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalingState {
    Stable,
    HaveLocalOffer,
    HaveRemoteOffer,
    Closed,
}

/// Offer/answer steps that move the signaling state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalingOp {
    CreateOffer,
    ReceiveOffer,
    CreateAnswer,
    ApplyAnswer,
    Close,
}

/// The next state, or `None` when `op` is illegal in `state`.
pub fn next_state(state: SignalingState, op: SignalingOp) -> Option<SignalingState> {
    use SignalingOp as O;
    use SignalingState as S;
    match (state, op) {
        (S::Closed, _) => None,
        (_, O::Close) => Some(S::Closed),
        (S::Stable, O::CreateOffer) => Some(S::HaveLocalOffer),
        (S::Stable, O::ReceiveOffer) => Some(S::HaveRemoteOffer),
        (S::HaveRemoteOffer, O::CreateAnswer) => Some(S::Stable),
        (S::HaveLocalOffer, O::ApplyAnswer) => Some(S::Stable),
        _ => None,
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub id: String,
    #[serde(default)]
    pub codecs: CodecSet,
    #[serde(default = "yes")]
    pub data_channels: bool,
    /// Host addresses; defaults to one private address per endpoint.
    #[serde(default)]
    pub host_addresses: Vec<String>,
    /// Address a STUN server would report.
    #[serde(default)]
    pub public_address: Option<String>,
    /// Address a TURN server would allocate.
    #[serde(default)]
    pub relay_address: Option<String>,
    #[serde(default = "udp")]
    pub transport: Transport,
    #[serde(default)]
    pub peer_config: PeerConfig,
    #[serde(default)]
    pub network: NetworkModel,
}

fn udp() -> Transport {
    Transport::Udp
}

impl EndpointConfig {
    pub fn new(id: &str) -> Self {
        EndpointConfig {
            id: id.to_string(),
            codecs: CodecSet::default(),
            data_channels: true,
            host_addresses: Vec::new(),
            public_address: None,
            relay_address: None,
            transport: Transport::Udp,
            peer_config: PeerConfig::default(),
            network: NetworkModel::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("endpoint id must not be empty".into());
        }
        for name in self.codecs.audio.iter().chain(&self.codecs.video) {
            if known_codec(name).is_none() {
                return Err(format!("unknown codec `{name}`"));
            }
        }
        self.network.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEndpoint {
    pub id: String,
    pub index: usize,
    pub role: Option<Role>,
    pub codecs: CodecSet,
    pub data_channels: bool,
    pub local_candidates: Vec<IceCandidate>,
    pub signaling_state: SignalingState,
    /// Configuration after the Connect category has seen it.
    pub peer_config: PeerConfig,
    pub encoding: EncodingParams,
    pub network: NetworkModel,
    pub transport: Transport,
    pub last_constraints: Option<MediaConstraints>,
    pub offers_created: u32,
}

fn has_stun(cfg: &PeerConfig) -> bool {
    cfg.ice_servers
        .iter()
        .flat_map(|s| &s.urls)
        .any(|u| u.starts_with("stun:") || u.starts_with("turn:") || u.starts_with("turns:"))
}

fn has_turn(cfg: &PeerConfig) -> bool {
    cfg.ice_servers.iter().any(|s| s.is_relay())
}

fn candidate(foundation: &str, transport: Transport, address: &str, port: u16, t: CandidateType, local_pref: u32) -> IceCandidate {
    let mut c = IceCandidate::new(foundation, 1, transport, address, port, t);
    c.priority = candidate_priority(t, local_pref, 1);
    c.raw = serialize_candidate(&c);
    c
}

/// Candidates an endpoint gathers under `peer_config`: one host candidate
/// per address, a server-reflexive one when any ICE server is configured
/// and a relay one when a TURN server is. A relay-only policy keeps only
/// the relay candidate.
pub fn gather_candidates(config: &EndpointConfig, index: usize, peer_config: &PeerConfig) -> Vec<IceCandidate> {
    let octet = 10 + index;
    let hosts = if config.host_addresses.is_empty() {
        vec![format!("192.168.1.{octet}")]
    } else {
        config.host_addresses.clone()
    };
    let public = config
        .public_address
        .clone()
        .unwrap_or_else(|| format!("198.51.100.{octet}"));
    let relay = config
        .relay_address
        .clone()
        .unwrap_or_else(|| format!("203.0.113.{octet}"));
    let t = config.transport;
    let mut out = Vec::new();
    if peer_config.ice_transport_policy != IceTransportPolicy::Relay {
        for (i, addr) in hosts.iter().enumerate() {
            out.push(candidate(&format!("{}", i + 1), t, addr, 50000 + i as u16, CandidateType::Host, 65535 - i as u32));
        }
        if has_stun(peer_config) {
            out.push(
                candidate("100", t, &public, 51000, CandidateType::Srflx, 65535).with_related(&hosts[0], 50000),
            );
        }
    }
    if has_turn(peer_config) {
        out.push(candidate("200", t, &relay, 52000, CandidateType::Relay, 65535).with_related(&public, 51000));
    }
    out
}

/// Builds an offer listing each kind's codecs in preference order, plus
/// a data section when data channels are enabled.
pub fn build_offer(codecs: &CodecSet, data_channels: bool, session_id: u64, version: u32) -> SessionDescription {
    let mut sdp = String::new();
    let mut mids = Vec::new();
    let mut body = String::new();
    for kind in ["audio", "video"] {
        let list: Vec<&KnownCodec> = codecs.for_kind(kind).iter().filter_map(|c| known_codec(c)).collect();
        if list.is_empty() {
            continue;
        }
        let mid = mids.len().to_string();
        let pts: Vec<String> = list.iter().map(|c| c.pt.to_string()).collect();
        let _ = write!(
            body,
            "m={kind} 9 UDP/TLS/RTP/SAVPF {}\r\nc=IN IP4 0.0.0.0\r\na=mid:{mid}\r\na=sendrecv\r\na=rtcp-mux\r\n",
            pts.join(" ")
        );
        for c in &list {
            let _ = write!(body, "a=rtpmap:{} {}/{}", c.pt, c.name, c.clock);
            if let Some(ch) = c.channels {
                let _ = write!(body, "/{ch}");
            }
            body.push_str("\r\n");
            if kind == "video" {
                for fb in ["nack", "nack pli", "ccm fir"] {
                    let _ = write!(body, "a=rtcp-fb:{} {fb}\r\n", c.pt);
                }
            }
            if let Some(f) = c.fmtp {
                let _ = write!(body, "a=fmtp:{} {f}\r\n", c.pt);
            }
        }
        mids.push(mid);
    }
    if data_channels {
        let mid = mids.len().to_string();
        let _ = write!(
            body,
            "m=application 9 UDP/DTLS/SCTP webrtc-datachannel\r\nc=IN IP4 0.0.0.0\r\na=mid:{mid}\r\na=sctp-port:5000\r\n"
        );
        mids.push(mid);
    }
    let _ = write!(sdp, "v=0\r\no=- {session_id} {version} IN IP4 127.0.0.1\r\ns=-\r\nt=0 0\r\n");
    if !mids.is_empty() {
        let _ = write!(sdp, "a=group:BUNDLE {}\r\n", mids.join(" "));
    }
    sdp.push_str(&body);
    SessionDescription::parse(&sdp, SdpType::Offer).expect("generated offer parses")
}

fn answer_section(offered: &MediaSection, codecs: &CodecSet, data_channels: bool, out: &mut String) {
    let mid = offered.mid().map(|m| format!("a=mid:{m}\r\n")).unwrap_or_default();
    if !offered.is_rtp() {
        let formats = offered.non_rtp_formats.join(" ");
        let port = if data_channels && offered.kind.as_str() == "application" { 9 } else { 0 };
        let _ = write!(out, "m={} {port} {} {formats}\r\nc=IN IP4 0.0.0.0\r\n{mid}", offered.kind, offered.protocol);
        if port != 0 {
            if let Some(p) = offered.attribute("sctp-port") {
                let _ = write!(out, "a=sctp-port:{p}\r\n");
            }
        }
        return;
    }
    let accepted: Vec<u8> = offered
        .payload_ids
        .iter()
        .copied()
        .filter(|pt| {
            offered
                .codec_name(*pt)
                .is_some_and(|name| codecs.supports(offered.kind.as_str(), &name))
        })
        .collect();
    if accepted.is_empty() {
        let first = offered.payload_ids.first().copied().unwrap_or(0);
        let _ = write!(out, "m={} 0 {} {first}\r\nc=IN IP4 0.0.0.0\r\n{mid}", offered.kind, offered.protocol);
        return;
    }
    let pts: Vec<String> = accepted.iter().map(u8::to_string).collect();
    let _ = write!(
        out,
        "m={} 9 {} {}\r\nc=IN IP4 0.0.0.0\r\n{mid}a={}\r\na=rtcp-mux\r\n",
        offered.kind,
        offered.protocol,
        pts.join(" "),
        offered.direction().reversed().as_str()
    );
    for line in &offered.lines {
        let keep = match line {
            MediaLine::Rtpmap { .. } | MediaLine::Fmtp { .. } | MediaLine::RtcpFb { pt: Some(_), .. } => {
                line.payload_id().is_some_and(|pt| accepted.contains(&pt))
            }
            _ => false,
        };
        if keep {
            out.push_str(&line.render());
            out.push_str("\r\n");
        }
    }
}

/// RFC 3264 answer: each section keeps the offered codecs the answerer
/// supports, in the offer's order; sections with none are rejected with
/// port 0.
pub fn build_answer(offer: &SessionDescription, codecs: &CodecSet, data_channels: bool, session_id: u64) -> Result<SessionDescription, SdpError> {
    let mut sdp = format!("v=0\r\no=- {session_id} 1 IN IP4 127.0.0.1\r\ns=-\r\nt=0 0\r\n");
    let accepted_mids: Vec<String> = offer
        .media_sections
        .iter()
        .filter(|m| {
            if m.is_rtp() {
                m.payload_ids.iter().any(|pt| {
                    m.codec_name(*pt)
                        .is_some_and(|n| codecs.supports(m.kind.as_str(), &n))
                })
            } else {
                data_channels && m.kind.as_str() == "application"
            }
        })
        .filter_map(|m| m.mid().map(str::to_string))
        .collect();
    if !accepted_mids.is_empty() {
        let _ = write!(sdp, "a=group:BUNDLE {}\r\n", accepted_mids.join(" "));
    }
    for section in &offer.media_sections {
        answer_section(section, codecs, data_channels, &mut sdp);
    }
    SessionDescription::parse(&sdp, SdpType::Answer)
}

/// Codec chosen per kind: the first payload type of each accepted RTP
/// section in the answer.
pub fn negotiated_codecs(answer: &SessionDescription) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for m in &answer.media_sections {
        if m.is_rtp() && !m.is_rejected() {
            if let Some(name) = m.payload_ids.first().and_then(|pt| m.codec_name(*pt)) {
                out.entry(m.kind.as_str().to_string()).or_insert(name);
            }
        }
    }
    out
}
