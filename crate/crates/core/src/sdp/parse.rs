use crate::ice::parse_candidate;

use super::{Direction, FmtpParams, MediaKind, MediaLine, MediaSection, RtpCodec, SdpType, SessionDescription};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SdpError {
    #[error("malformed line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("missing mandatory {0} line")]
    MissingMandatory(&'static str),
}

fn malformed(line_no: usize, reason: impl Into<String>) -> SdpError {
    SdpError::MalformedLine {
        line_no,
        reason: reason.into(),
    }
}

/// Parses SDP text. Lines may end in CR LF or bare LF; line numbers in
/// errors are 1-based.
pub fn parse_sdp(text: &str, sdp_type: SdpType) -> Result<SessionDescription, SdpError> {
    let body = text.trim_end_matches(['\r', '\n']);
    let mut session_lines = Vec::new();
    let mut media_sections: Vec<MediaSection> = Vec::new();

    if body.is_empty() {
        return Err(SdpError::MissingMandatory("v="));
    }

    for (idx, raw) in body.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let bytes = line.as_bytes();
        if bytes.len() < 2 || bytes[1] != b'=' || !bytes[0].is_ascii_lowercase() {
            return Err(malformed(line_no, "expected `<type>=<value>`"));
        }
        if line_no == 1 && !line.starts_with("v=") {
            return Err(SdpError::MissingMandatory("v="));
        }
        if let Some(m) = line.strip_prefix("m=") {
            media_sections.push(parse_m_line(line_no, m)?);
            continue;
        }
        match media_sections.last_mut() {
            None => session_lines.push(line.to_string()),
            Some(section) => parse_media_line(line_no, line, section)?,
        }
    }

    if !session_lines.iter().any(|l| l.starts_with("o=")) {
        return Err(SdpError::MissingMandatory("o="));
    }
    Ok(SessionDescription {
        sdp_type,
        session_lines,
        media_sections,
    })
}

fn parse_m_line(line_no: usize, value: &str) -> Result<MediaSection, SdpError> {
    let tokens: Vec<&str> = value.split(' ').collect();
    if tokens.len() < 4 || tokens.iter().any(|t| t.is_empty()) {
        return Err(malformed(line_no, "m= needs media, port, proto and formats"));
    }
    let kind: MediaKind = tokens[0].parse().unwrap_or(MediaKind::Other(tokens[0].into()));
    if !tokens[0].bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(malformed(line_no, "bad media type"));
    }
    let (port, port_count) = match tokens[1].split_once('/') {
        Some((p, n)) => (
            p.parse::<u16>().map_err(|_| malformed(line_no, "bad port"))?,
            Some(n.parse::<u16>().map_err(|_| malformed(line_no, "bad port count"))?),
        ),
        None => (
            tokens[1].parse::<u16>().map_err(|_| malformed(line_no, "bad port"))?,
            None,
        ),
    };
    let mut section = MediaSection::new(kind, port, tokens[2]);
    section.port_count = port_count;
    if section.is_rtp() {
        for t in &tokens[3..] {
            let pt = t
                .parse::<u8>()
                .ok()
                .filter(|pt| *pt < 128)
                .ok_or_else(|| malformed(line_no, format!("bad payload type `{t}`")))?;
            section.payload_ids.push(pt);
        }
    } else {
        section.non_rtp_formats = tokens[3..].iter().map(|t| t.to_string()).collect();
    }
    Ok(section)
}

fn parse_pt(line_no: usize, text: &str) -> Result<u8, SdpError> {
    text.parse::<u8>()
        .ok()
        .filter(|pt| *pt < 128)
        .ok_or_else(|| malformed(line_no, format!("bad payload type `{text}`")))
}

fn parse_media_line(line_no: usize, line: &str, section: &mut MediaSection) -> Result<(), SdpError> {
    if let Some(kbps) = line.strip_prefix("b=AS:") {
        let kbps = kbps
            .parse::<u32>()
            .map_err(|_| malformed(line_no, "bad b=AS value"))?;
        if section.bandwidth_as_kbps.replace(kbps).is_some() {
            return Err(malformed(line_no, "duplicate b=AS"));
        }
        return Ok(());
    }
    let Some(attr) = line.strip_prefix("a=") else {
        section.lines.push(MediaLine::Other(line.to_string()));
        return Ok(());
    };

    let parsed = if let Some(rest) = attr.strip_prefix("rtpmap:") {
        let (pt, encoding) = rest
            .split_once(' ')
            .ok_or_else(|| malformed(line_no, "rtpmap needs `<pt> <encoding>`"))?;
        let mut parts = encoding.split('/');
        let codec_name = parts.next().filter(|n| !n.is_empty());
        let clock_rate = parts.next().and_then(|c| c.parse::<u32>().ok());
        let channels = match parts.next() {
            Some(ch) => Some(
                ch.parse::<u32>()
                    .map_err(|_| malformed(line_no, "bad rtpmap channels"))?,
            ),
            None => None,
        };
        match (codec_name, clock_rate, parts.next()) {
            (Some(name), Some(clock_rate), None) => MediaLine::Rtpmap {
                pt: parse_pt(line_no, pt)?,
                codec: RtpCodec {
                    codec_name: name.to_string(),
                    clock_rate,
                    channels,
                },
            },
            _ => return Err(malformed(line_no, "bad rtpmap encoding")),
        }
    } else if let Some(rest) = attr.strip_prefix("fmtp:") {
        let (pt, params) = rest
            .split_once(' ')
            .ok_or_else(|| malformed(line_no, "fmtp needs `<pt> <params>`"))?;
        MediaLine::Fmtp {
            pt: parse_pt(line_no, pt)?,
            params: FmtpParams::parse(params),
        }
    } else if let Some(rest) = attr.strip_prefix("rtcp-fb:") {
        let (pt, value) = rest
            .split_once(' ')
            .ok_or_else(|| malformed(line_no, "rtcp-fb needs `<pt> <type>`"))?;
        MediaLine::RtcpFb {
            pt: if pt == "*" { None } else { Some(parse_pt(line_no, pt)?) },
            value: value.to_string(),
        }
    } else if attr.starts_with("candidate:") {
        MediaLine::Candidate(
            parse_candidate(line).map_err(|e| malformed(line_no, e.to_string()))?,
        )
    } else if let Ok(d) = attr.parse::<Direction>() {
        MediaLine::Direction(d)
    } else {
        MediaLine::Other(line.to_string())
    };
    if let Some(pt) = parsed.payload_id() {
        if !section.payload_ids.contains(&pt) {
            return Err(malformed(line_no, format!("payload {pt} not listed on the m= line")));
        }
    }
    section.lines.push(parsed);
    Ok(())
}
