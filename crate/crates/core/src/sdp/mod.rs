//! Session description model.
//!
//! Only the lines the rewrites touch are modeled (m= line, `b=AS`, rtpmap,
//! fmtp, rtcp-fb, direction and candidate attributes). Everything else is
//! kept verbatim in its original position so an unmodified description
//! serializes back to its input with CR LF line endings.

mod munge;
mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ice::{parse_candidate, serialize_candidate, IceCandidate};

pub use munge::{
    modify_feedback, prefer_codec, set_fmtp_param, set_media_policy, set_receiver_bandwidth,
    FeedbackAction, MediaPolicy, Munged, FEC_CODECS,
};
pub use parse::{parse_sdp, SdpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdpType {
    Offer,
    Answer,
}

impl SdpType {
    pub fn as_str(self) -> &'static str {
        match self {
            SdpType::Offer => "offer",
            SdpType::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MediaKind {
    Audio,
    Video,
    Application,
    Other(String),
}

impl MediaKind {
    pub fn as_str(&self) -> &str {
        match self {
            MediaKind::Audio => "audio",
            MediaKind::Video => "video",
            MediaKind::Application => "application",
            MediaKind::Other(s) => s,
        }
    }
}

impl FromStr for MediaKind {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "audio" => MediaKind::Audio,
            "video" => MediaKind::Video,
            "application" => MediaKind::Application,
            other => MediaKind::Other(other.to_string()),
        })
    }
}

impl fmt::Display for MediaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for MediaKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MediaKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or(MediaKind::Other(s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sendrecv,
    Sendonly,
    Recvonly,
    Inactive,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Sendrecv => "sendrecv",
            Direction::Sendonly => "sendonly",
            Direction::Recvonly => "recvonly",
            Direction::Inactive => "inactive",
        }
    }

    /// The direction an answerer uses in reply.
    pub fn reversed(self) -> Direction {
        match self {
            Direction::Sendonly => Direction::Recvonly,
            Direction::Recvonly => Direction::Sendonly,
            d => d,
        }
    }
}

impl FromStr for Direction {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sendrecv" => Ok(Direction::Sendrecv),
            "sendonly" => Ok(Direction::Sendonly),
            "recvonly" => Ok(Direction::Recvonly),
            "inactive" => Ok(Direction::Inactive),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtpCodec {
    pub codec_name: String,
    pub clock_rate: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<u32>,
}

/// `a=fmtp` parameter list in original order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FmtpParams {
    pub entries: Vec<(String, Option<String>)>,
    /// Whether entries were separated by `"; "` rather than `";"`.
    pub spaced: bool,
}

impl FmtpParams {
    pub fn parse(text: &str) -> Self {
        let entries = text
            .split(';')
            .map(str::trim)
            .filter(|e| !e.is_empty())
            .map(|e| match e.split_once('=') {
                Some((k, v)) => (k.trim().to_string(), Some(v.trim().to_string())),
                None => (e.to_string(), None),
            })
            .collect();
        FmtpParams {
            entries,
            spaced: text.contains("; "),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .and_then(|(_, v)| v.as_deref())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|(k, _)| k.eq_ignore_ascii_case(key)) {
            Some(entry) => entry.1 = Some(value.to_string()),
            None => self.entries.push((key.to_string(), Some(value.to_string()))),
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.clone().unwrap_or_default()))
            .collect()
    }
}

impl fmt::Display for FmtpParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sep = if self.spaced { "; " } else { ";" };
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(sep)?;
            }
            match v {
                Some(v) => write!(f, "{k}={v}")?,
                None => f.write_str(k)?,
            }
        }
        Ok(())
    }
}

/// One non-`m=` line of a media section.
#[derive(Debug, Clone, PartialEq)]
pub enum MediaLine {
    Rtpmap { pt: u8, codec: RtpCodec },
    Fmtp { pt: u8, params: FmtpParams },
    /// `pt` is `None` for the `*` wildcard.
    RtcpFb { pt: Option<u8>, value: String },
    Direction(Direction),
    Candidate(IceCandidate),
    Other(String),
}

impl MediaLine {
    pub fn payload_id(&self) -> Option<u8> {
        match self {
            MediaLine::Rtpmap { pt, .. } | MediaLine::Fmtp { pt, .. } => Some(*pt),
            MediaLine::RtcpFb { pt, .. } => *pt,
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            MediaLine::Rtpmap { pt, codec } => match codec.channels {
                Some(ch) => format!("a=rtpmap:{pt} {}/{}/{ch}", codec.codec_name, codec.clock_rate),
                None => format!("a=rtpmap:{pt} {}/{}", codec.codec_name, codec.clock_rate),
            },
            MediaLine::Fmtp { pt, params } => format!("a=fmtp:{pt} {params}"),
            MediaLine::RtcpFb { pt: Some(pt), value } => format!("a=rtcp-fb:{pt} {value}"),
            MediaLine::RtcpFb { pt: None, value } => format!("a=rtcp-fb:* {value}"),
            MediaLine::Direction(d) => format!("a={}", d.as_str()),
            MediaLine::Candidate(c) => {
                let raw = c.raw.strip_prefix("a=").unwrap_or(&c.raw);
                if parse_candidate(raw).is_ok_and(|p| &p == c) {
                    format!("a={raw}")
                } else {
                    format!("a={}", serialize_candidate(c))
                }
            }
            MediaLine::Other(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaSection {
    pub kind: MediaKind,
    pub port: u16,
    pub port_count: Option<u16>,
    pub protocol: String,
    /// RTP payload types from the m= line, in preference order.
    pub payload_ids: Vec<u8>,
    /// Format tokens of non-RTP sections (e.g. `webrtc-datachannel`).
    pub non_rtp_formats: Vec<String>,
    pub bandwidth_as_kbps: Option<u32>,
    pub lines: Vec<MediaLine>,
}

impl MediaSection {
    pub fn new(kind: MediaKind, port: u16, protocol: &str) -> Self {
        MediaSection {
            kind,
            port,
            port_count: None,
            protocol: protocol.to_string(),
            payload_ids: Vec::new(),
            non_rtp_formats: Vec::new(),
            bandwidth_as_kbps: None,
            lines: Vec::new(),
        }
    }

    pub fn is_rtp(&self) -> bool {
        self.protocol.contains("RTP")
    }

    pub fn rtpmap(&self) -> BTreeMap<u8, &RtpCodec> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                MediaLine::Rtpmap { pt, codec } => Some((*pt, codec)),
                _ => None,
            })
            .collect()
    }

    pub fn codec(&self, pt: u8) -> Option<&RtpCodec> {
        self.lines.iter().find_map(|l| match l {
            MediaLine::Rtpmap { pt: p, codec } if *p == pt => Some(codec),
            _ => None,
        })
    }

    /// Codec name for a payload type, falling back to the static RTP/AVP
    /// assignments for types without an rtpmap line.
    pub fn codec_name(&self, pt: u8) -> Option<String> {
        self.codec(pt)
            .map(|c| c.codec_name.clone())
            .or_else(|| static_payload_name(pt).map(str::to_string))
    }

    pub fn fmtp(&self, pt: u8) -> Option<&FmtpParams> {
        self.lines.iter().find_map(|l| match l {
            MediaLine::Fmtp { pt: p, params } if *p == pt => Some(params),
            _ => None,
        })
    }

    pub fn rtcp_fb(&self, pt: u8) -> Vec<&str> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                MediaLine::RtcpFb { pt: Some(p), value } if *p == pt => Some(value.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Explicit direction attribute, or `sendrecv` when none is present.
    pub fn direction(&self) -> Direction {
        self.lines
            .iter()
            .find_map(|l| match l {
                MediaLine::Direction(d) => Some(*d),
                _ => None,
            })
            .unwrap_or(Direction::Sendrecv)
    }

    pub fn candidates(&self) -> impl Iterator<Item = &IceCandidate> {
        self.lines.iter().filter_map(|l| match l {
            MediaLine::Candidate(c) => Some(c),
            _ => None,
        })
    }

    pub fn other_lines(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter_map(|l| match l {
            MediaLine::Other(s) => Some(s.as_str()),
            _ => None,
        })
    }

    pub fn attribute(&self, name: &str) -> Option<&str> {
        let prefix = format!("a={name}:");
        self.other_lines().find_map(|l| l.strip_prefix(prefix.as_str()))
    }

    pub fn mid(&self) -> Option<&str> {
        self.attribute("mid")
    }

    pub fn is_rejected(&self) -> bool {
        self.port == 0
    }

    fn render_m_line(&self) -> String {
        let mut line = format!("m={} {}", self.kind, self.port);
        if let Some(n) = self.port_count {
            line.push_str(&format!("/{n}"));
        }
        line.push(' ');
        line.push_str(&self.protocol);
        if self.is_rtp() {
            for pt in &self.payload_ids {
                line.push_str(&format!(" {pt}"));
            }
        } else {
            for f in &self.non_rtp_formats {
                line.push(' ');
                line.push_str(f);
            }
        }
        line
    }

    fn render_into(&self, out: &mut String) {
        out.push_str(&self.render_m_line());
        out.push_str("\r\n");
        let rendered: Vec<String> = self.lines.iter().map(MediaLine::render).collect();
        // b=AS goes right after the c= line, else ahead of the first attribute
        let bw_at = self.bandwidth_as_kbps.map(|_| {
            rendered
                .iter()
                .position(|l| l.starts_with("c="))
                .map(|i| i + 1)
                .or_else(|| rendered.iter().position(|l| l.starts_with("a=")))
                .unwrap_or(rendered.len())
        });
        for (i, line) in rendered.iter().enumerate() {
            if bw_at == Some(i) {
                push_bandwidth(out, self.bandwidth_as_kbps);
            }
            out.push_str(line);
            out.push_str("\r\n");
        }
        if bw_at == Some(rendered.len()) {
            push_bandwidth(out, self.bandwidth_as_kbps);
        }
    }
}

fn push_bandwidth(out: &mut String, kbps: Option<u32>) {
    if let Some(kbps) = kbps {
        out.push_str(&format!("b=AS:{kbps}\r\n"));
    }
}

fn static_payload_name(pt: u8) -> Option<&'static str> {
    match pt {
        0 => Some("PCMU"),
        8 => Some("PCMA"),
        9 => Some("G722"),
        18 => Some("G729"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionDescription {
    pub sdp_type: SdpType,
    pub session_lines: Vec<String>,
    pub media_sections: Vec<MediaSection>,
}

impl SessionDescription {
    pub fn parse(text: &str, sdp_type: SdpType) -> Result<Self, SdpError> {
        parse_sdp(text, sdp_type)
    }

    pub fn sections_of<'a>(&'a self, kind: &'a MediaKind) -> impl Iterator<Item = &'a MediaSection> {
        self.media_sections.iter().filter(move |m| &m.kind == kind)
    }

    pub fn to_sdp_string(&self) -> String {
        serialize_sdp(self)
    }
}

/// Canonical text form: every line terminated by CR LF.
pub fn serialize_sdp(sd: &SessionDescription) -> String {
    let mut out = String::new();
    for line in &sd.session_lines {
        out.push_str(line);
        out.push_str("\r\n");
    }
    for section in &sd.media_sections {
        section.render_into(&mut out);
    }
    out
}

/// Rewrites line endings to CR LF and drops trailing blank lines.
pub fn canonicalize_line_endings(text: &str) -> String {
    let mut out = String::new();
    for line in text.trim_end_matches(['\r', '\n']).split('\n') {
        out.push_str(line.strip_suffix('\r').unwrap_or(line));
        out.push_str("\r\n");
    }
    out
}

/// Wire form mirrors an `RTCSessionDescriptionInit`: `{"type", "sdp"}`.
#[derive(Serialize, Deserialize)]
struct WireDescription {
    #[serde(rename = "type")]
    sdp_type: SdpType,
    sdp: String,
}

impl Serialize for SessionDescription {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WireDescription {
            sdp_type: self.sdp_type,
            sdp: serialize_sdp(self),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SessionDescription {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = WireDescription::deserialize(d)?;
        parse_sdp(&wire.sdp, wire.sdp_type).map_err(serde::de::Error::custom)
    }
}

/// Case-insensitive codec match with the `G.711` (PCMU, PCMA), `H.264` and
/// `G.722` aliases. Returns a rank: lower sorts first among matches.
pub fn codec_match_rank(codec_name: &str, query: &str) -> Option<usize> {
    let q = query.to_ascii_lowercase();
    let name = codec_name.to_ascii_lowercase();
    match q.as_str() {
        "g.711" | "g711" => match name.as_str() {
            "pcmu" => Some(0),
            "pcma" => Some(1),
            _ => None,
        },
        "h.264" => (name == "h264").then_some(0),
        "g.722" => (name == "g722").then_some(0),
        _ => (name == q).then_some(0),
    }
}
