//! Session-category rewrites. Each takes a description and returns a new
//! one; lines outside the targeted fields are left exactly as they were.

use serde::{Deserialize, Serialize};

use super::{codec_match_rank, Direction, FmtpParams, MediaKind, MediaLine, SessionDescription};

/// Codecs treated as forward error correction.
pub const FEC_CODECS: &[&str] = &["red", "ulpfec", "flexfec-03"];

#[derive(Debug, Clone, PartialEq)]
pub struct Munged {
    pub sd: SessionDescription,
    pub warnings: Vec<String>,
}

impl Munged {
    fn new(sd: SessionDescription) -> Self {
        Munged {
            sd,
            warnings: Vec::new(),
        }
    }

    fn warn(mut self, msg: String) -> Self {
        tracing::warn!("{msg}");
        self.warnings.push(msg);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaPolicy {
    Disable,
    Direction(Direction),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackAction {
    RemoveNack,
    RemoveFec,
    RequireFec,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid value: {0}")]
pub struct InvalidValue(pub String);

/// Moves payload types of the named codec to the front of every `kind`
/// section. Matches keep their relative order (PCMU ahead of PCMA for the
/// G.711 alias); everything else, RTX and FEC included, keeps its order
/// behind them.
pub fn prefer_codec(sd: &SessionDescription, kind: &MediaKind, codec_name: &str) -> Munged {
    let mut out = sd.clone();
    let mut matched = false;
    for section in out.media_sections.iter_mut().filter(|m| &m.kind == kind) {
        let mut preferred: Vec<(usize, u8)> = Vec::new();
        let mut rest = Vec::new();
        for &pt in &section.payload_ids {
            match section
                .codec_name(pt)
                .and_then(|name| codec_match_rank(&name, codec_name))
            {
                Some(rank) => preferred.push((rank, pt)),
                None => rest.push(pt),
            }
        }
        if preferred.is_empty() {
            continue;
        }
        matched = true;
        preferred.sort_by_key(|(rank, _)| *rank);
        section.payload_ids = preferred.into_iter().map(|(_, pt)| pt).chain(rest).collect();
    }
    let munged = Munged::new(out);
    if matched {
        munged
    } else {
        munged.warn(format!("codec {codec_name} not offered in any {kind} section"))
    }
}

/// Rejects (port 0) or re-directs every `kind` section.
pub fn set_media_policy(sd: &SessionDescription, kind: &MediaKind, policy: MediaPolicy) -> Munged {
    let mut out = sd.clone();
    let mut touched = false;
    for section in out.media_sections.iter_mut().filter(|m| &m.kind == kind) {
        touched = true;
        match policy {
            MediaPolicy::Disable => section.port = 0,
            MediaPolicy::Direction(d) => {
                match section
                    .lines
                    .iter_mut()
                    .find(|l| matches!(l, MediaLine::Direction(_)))
                {
                    Some(line) => *line = MediaLine::Direction(d),
                    None => {
                        let at = section
                            .lines
                            .iter()
                            .position(|l| matches!(l, MediaLine::Rtpmap { .. }))
                            .unwrap_or(section.lines.len());
                        section.lines.insert(at, MediaLine::Direction(d));
                    }
                }
            }
        }
    }
    let munged = Munged::new(out);
    if touched {
        munged
    } else {
        munged.warn(format!("no {kind} section to apply media policy to"))
    }
}

/// Sets `b=AS` on every `kind` section, replacing any existing value.
pub fn set_receiver_bandwidth(
    sd: &SessionDescription,
    kind: &MediaKind,
    kbps: i64,
) -> Result<Munged, InvalidValue> {
    if kbps <= 0 || kbps > u32::MAX as i64 {
        return Err(InvalidValue(format!("bandwidth must be a positive kbps value, got {kbps}")));
    }
    let mut out = sd.clone();
    let mut touched = false;
    for section in out.media_sections.iter_mut().filter(|m| &m.kind == kind) {
        section.bandwidth_as_kbps = Some(kbps as u32);
        touched = true;
    }
    let munged = Munged::new(out);
    Ok(if touched {
        munged
    } else {
        munged.warn(format!("no {kind} section to limit"))
    })
}

/// Sets `key=value` in the fmtp line of every payload type of `codec_name`,
/// adding the fmtp line after the payload's other attributes if needed.
pub fn set_fmtp_param(sd: &SessionDescription, codec_name: &str, key: &str, value: &str) -> Munged {
    let mut out = sd.clone();
    let mut matched = false;
    for section in &mut out.media_sections {
        let targets: Vec<u8> = section
            .payload_ids
            .iter()
            .copied()
            .filter(|&pt| {
                section
                    .codec_name(pt)
                    .is_some_and(|n| codec_match_rank(&n, codec_name).is_some())
            })
            .collect();
        for pt in targets {
            matched = true;
            let existing = section.lines.iter_mut().find_map(|l| match l {
                MediaLine::Fmtp { pt: p, params } if *p == pt => Some(params),
                _ => None,
            });
            match existing {
                Some(params) => params.set(key, value),
                None => {
                    let mut params = FmtpParams::default();
                    params.set(key, value);
                    let at = section
                        .lines
                        .iter()
                        .rposition(|l| l.payload_id() == Some(pt))
                        .map(|i| i + 1)
                        .unwrap_or(section.lines.len());
                    section.lines.insert(at, MediaLine::Fmtp { pt, params });
                }
            }
        }
    }
    let munged = Munged::new(out);
    if matched {
        munged
    } else {
        munged.warn(format!("codec {codec_name} not present; fmtp {key} not set"))
    }
}

fn is_fec(name: &str) -> bool {
    FEC_CODECS.iter().any(|f| f.eq_ignore_ascii_case(name))
}

/// Removes NACK feedback or FEC payloads, or checks that FEC is offered.
///
/// `RemoveFec` also drops RTX payloads whose `apt` points at a removed FEC
/// payload, since they would otherwise reference a missing type.
pub fn modify_feedback(sd: &SessionDescription, action: FeedbackAction) -> Munged {
    let mut out = sd.clone();
    match action {
        FeedbackAction::RemoveNack => {
            for section in &mut out.media_sections {
                section.lines.retain(|l| match l {
                    MediaLine::RtcpFb { value, .. } => value.split(' ').next() != Some("nack"),
                    _ => true,
                });
            }
            Munged::new(out)
        }
        FeedbackAction::RemoveFec => {
            for section in &mut out.media_sections {
                let mut removed: Vec<u8> = section
                    .payload_ids
                    .iter()
                    .copied()
                    .filter(|&pt| section.codec_name(pt).is_some_and(|n| is_fec(&n)))
                    .collect();
                let rtx: Vec<u8> = section
                    .payload_ids
                    .iter()
                    .copied()
                    .filter(|&pt| {
                        section
                            .codec_name(pt)
                            .is_some_and(|n| n.eq_ignore_ascii_case("rtx"))
                            && section
                                .fmtp(pt)
                                .and_then(|p| p.get("apt"))
                                .and_then(|apt| apt.parse::<u8>().ok())
                                .is_some_and(|apt| removed.contains(&apt))
                    })
                    .collect();
                removed.extend(rtx);
                section.payload_ids.retain(|pt| !removed.contains(pt));
                section
                    .lines
                    .retain(|l| l.payload_id().is_none_or(|pt| !removed.contains(&pt)));
            }
            Munged::new(out)
        }
        FeedbackAction::RequireFec => {
            let has_fec = out.media_sections.iter().any(|m| {
                m.payload_ids
                    .iter()
                    .any(|&pt| m.codec_name(pt).is_some_and(|n| is_fec(&n)))
            });
            let munged = Munged::new(out);
            if has_fec {
                munged
            } else {
                munged.warn("no FEC codec offered; cannot add one at the signaling level".into())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{parse_sdp, serialize_sdp, SdpType};

    const AV: &str = "v=0\r\n\
o=- 1 2 IN IP4 127.0.0.1\r\n\
s=-\r\n\
t=0 0\r\n\
m=audio 9 UDP/TLS/RTP/SAVPF 111 63 0 8\r\n\
c=IN IP4 0.0.0.0\r\n\
a=mid:0\r\n\
a=sendrecv\r\n\
a=rtpmap:111 opus/48000/2\r\n\
a=rtcp-fb:111 transport-cc\r\n\
a=fmtp:111 minptime=10;useinbandfec=1\r\n\
a=rtpmap:63 red/48000/2\r\n\
a=fmtp:63 111/111\r\n\
a=rtpmap:0 PCMU/8000\r\n\
a=rtpmap:8 PCMA/8000\r\n\
m=video 9 UDP/TLS/RTP/SAVPF 96 97 102 103 116 117 118\r\n\
c=IN IP4 0.0.0.0\r\n\
a=mid:1\r\n\
a=sendrecv\r\n\
a=rtpmap:96 VP8/90000\r\n\
a=rtcp-fb:96 nack\r\n\
a=rtcp-fb:96 nack pli\r\n\
a=rtpmap:97 rtx/90000\r\n\
a=fmtp:97 apt=96\r\n\
a=rtpmap:102 H264/90000\r\n\
a=rtcp-fb:102 nack\r\n\
a=fmtp:102 level-asymmetry-allowed=1;packetization-mode=1;profile-level-id=42e01f\r\n\
a=rtpmap:103 rtx/90000\r\n\
a=fmtp:103 apt=102\r\n\
a=rtpmap:116 red/90000\r\n\
a=rtpmap:117 rtx/90000\r\n\
a=fmtp:117 apt=116\r\n\
a=rtpmap:118 ulpfec/90000\r\n";

    fn av() -> SessionDescription {
        parse_sdp(AV, SdpType::Offer).unwrap()
    }

    #[test]
    fn prefer_pcmu_two_codecs() {
        let text = "v=0\r\no=- 1 1 IN IP4 0.0.0.0\r\ns=-\r\nt=0 0\r\nm=audio 9 RTP/AVP 111 0\r\na=rtpmap:111 opus/48000/2\r\na=rtpmap:0 PCMU/8000\r\n";
        let sd = parse_sdp(text, SdpType::Offer).unwrap();
        let m = prefer_codec(&sd, &MediaKind::Audio, "PCMU");
        assert_eq!(m.sd.media_sections[0].payload_ids, vec![0, 111]);
        assert!(m.warnings.is_empty());
        let again = prefer_codec(&m.sd, &MediaKind::Audio, "PCMU");
        assert_eq!(again.sd, m.sd);
    }

    #[test]
    fn g711_alias_puts_pcmu_before_pcma() {
        let m = prefer_codec(&av(), &MediaKind::Audio, "G.711");
        assert_eq!(m.sd.media_sections[0].payload_ids, vec![0, 8, 111, 63]);
    }

    #[test]
    fn prefer_h264_leaves_rtx_in_place() {
        let m = prefer_codec(&av(), &MediaKind::Video, "H264");
        assert_eq!(m.sd.media_sections[1].payload_ids, vec![102, 96, 97, 103, 116, 117, 118]);
        // audio untouched
        assert_eq!(m.sd.media_sections[0], av().media_sections[0]);
    }

    #[test]
    fn prefer_absent_codec_warns() {
        let m = prefer_codec(&av(), &MediaKind::Audio, "G729");
        assert_eq!(m.sd, av());
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn disable_video_sets_port_zero() {
        let m = set_media_policy(&av(), &MediaKind::Video, MediaPolicy::Disable);
        assert_eq!(m.sd.media_sections[1].port, 0);
        assert_eq!(m.sd.media_sections[0].port, 9);
    }

    #[test]
    fn direction_replaced() {
        let m = set_media_policy(&av(), &MediaKind::Audio, MediaPolicy::Direction(Direction::Recvonly));
        assert_eq!(m.sd.media_sections[0].direction(), Direction::Recvonly);
        let text = serialize_sdp(&m.sd);
        assert!(text.contains("a=mid:0\r\na=recvonly\r\na=rtpmap:111"));
        assert!(!text.contains("a=mid:0\r\na=sendrecv"));
    }

    #[test]
    fn direction_added_ahead_of_rtpmap_when_missing() {
        let text = "v=0\r\no=- 1 1 IN IP4 0.0.0.0\r\ns=-\r\nt=0 0\r\nm=audio 9 RTP/AVP 0\r\na=mid:0\r\na=rtpmap:0 PCMU/8000\r\n";
        let sd = parse_sdp(text, SdpType::Offer).unwrap();
        let m = set_media_policy(&sd, &MediaKind::Audio, MediaPolicy::Direction(Direction::Sendonly));
        assert!(serialize_sdp(&m.sd).contains("a=mid:0\r\na=sendonly\r\na=rtpmap:0 PCMU/8000\r\n"));
    }

    #[test]
    fn disable_missing_kind_warns() {
        let text = "v=0\r\no=- 1 1 IN IP4 0.0.0.0\r\ns=-\r\nt=0 0\r\nm=video 9 RTP/AVP 96\r\na=rtpmap:96 VP8/90000\r\n";
        let sd = parse_sdp(text, SdpType::Offer).unwrap();
        let m = set_media_policy(&sd, &MediaKind::Audio, MediaPolicy::Disable);
        assert_eq!(m.sd, sd);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn bandwidth_overwrites_and_places_after_connection() {
        let m = set_receiver_bandwidth(&av(), &MediaKind::Video, 1000).unwrap();
        let m = set_receiver_bandwidth(&m.sd, &MediaKind::Video, 256).unwrap();
        let text = serialize_sdp(&m.sd);
        assert_eq!(text.matches("b=AS:").count(), 1);
        assert!(text.contains("m=video 9 UDP/TLS/RTP/SAVPF 96 97 102 103 116 117 118\r\nc=IN IP4 0.0.0.0\r\nb=AS:256\r\n"));
        assert_eq!(
            set_receiver_bandwidth(&av(), &MediaKind::Video, 0).unwrap_err(),
            InvalidValue("bandwidth must be a positive kbps value, got 0".into())
        );
        assert!(set_receiver_bandwidth(&av(), &MediaKind::Video, -5).is_err());
    }

    #[test]
    fn bandwidth_without_connection_goes_before_first_attribute() {
        let text = "v=0\r\no=- 1 1 IN IP4 0.0.0.0\r\ns=-\r\nt=0 0\r\nm=audio 9 RTP/AVP 0\r\na=rtpmap:0 PCMU/8000\r\n";
        let sd = parse_sdp(text, SdpType::Offer).unwrap();
        let m = set_receiver_bandwidth(&sd, &MediaKind::Audio, 64).unwrap();
        assert!(serialize_sdp(&m.sd).ends_with("m=audio 9 RTP/AVP 0\r\nb=AS:64\r\na=rtpmap:0 PCMU/8000\r\n"));
    }

    #[test]
    fn fmtp_updates_and_creates() {
        let m = set_fmtp_param(&av(), "opus", "stereo", "0");
        assert_eq!(m.sd.media_sections[0].fmtp(111).unwrap().get("stereo"), Some("0"));
        assert!(serialize_sdp(&m.sd).contains("a=fmtp:111 minptime=10;useinbandfec=1;stereo=0\r\n"));

        let m = set_fmtp_param(&av(), "H264", "packetization-mode", "0");
        assert!(serialize_sdp(&m.sd).contains(
            "a=fmtp:102 level-asymmetry-allowed=1;packetization-mode=0;profile-level-id=42e01f\r\n"
        ));

        let m = set_fmtp_param(&av(), "VP8", "max-fs", "3600");
        assert!(serialize_sdp(&m.sd)
            .contains("a=rtcp-fb:96 nack pli\r\na=fmtp:96 max-fs=3600\r\na=rtpmap:97 rtx/90000\r\n"));

        let m = set_fmtp_param(&av(), "AV1", "x", "1");
        assert_eq!(m.sd, av());
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn remove_nack_drops_both_tokens() {
        let m = modify_feedback(&av(), FeedbackAction::RemoveNack);
        let v = &m.sd.media_sections[1];
        assert!(v.rtcp_fb(96).is_empty());
        assert!(v.rtcp_fb(102).is_empty());
        assert_eq!(m.sd.media_sections[0].rtcp_fb(111), vec!["transport-cc"]);
    }

    #[test]
    fn remove_fec_drops_payloads_and_dependent_rtx() {
        let m = modify_feedback(&av(), FeedbackAction::RemoveFec);
        assert_eq!(m.sd.media_sections[0].payload_ids, vec![111, 0, 8]);
        assert_eq!(m.sd.media_sections[1].payload_ids, vec![96, 97, 102, 103]);
        let text = serialize_sdp(&m.sd);
        assert!(!text.contains("red/"));
        assert!(!text.contains("ulpfec"));
        assert!(!text.contains("apt=116"));
        assert!(!text.contains("a=fmtp:63"));
    }

    #[test]
    fn require_fec() {
        let m = modify_feedback(&av(), FeedbackAction::RequireFec);
        assert!(m.warnings.is_empty());
        let stripped = modify_feedback(&av(), FeedbackAction::RemoveFec).sd;
        let m = modify_feedback(&stripped, FeedbackAction::RequireFec);
        assert_eq!(m.sd, stripped);
        assert_eq!(m.warnings.len(), 1);
    }
}
