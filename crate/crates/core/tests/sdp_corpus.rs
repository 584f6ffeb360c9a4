use std::fs;
use std::path::{Path, PathBuf};

use rtcshim_core::sdp::{
    canonicalize_line_endings, modify_feedback, parse_sdp, prefer_codec, serialize_sdp,
    set_fmtp_param, set_receiver_bandwidth, FeedbackAction, MediaKind, SdpType,
    SessionDescription,
};

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

fn corpus() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "sdp"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn sdp_type(name: &str) -> SdpType {
    if name.contains("answer") {
        SdpType::Answer
    } else {
        SdpType::Offer
    }
}

#[test]
fn corpus_has_enough_documents() {
    assert!(corpus().len() >= 25, "corpus has {} documents", corpus().len());
}

#[test]
fn corpus_round_trips() {
    for (name, text) in corpus() {
        let first = parse_sdp(&text, sdp_type(&name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let wire = serialize_sdp(&first);
        let second = parse_sdp(&wire, sdp_type(&name)).unwrap();
        assert_eq!(first, second, "{name}: structure changed across a round trip");
        assert_eq!(
            wire,
            canonicalize_line_endings(&text),
            "{name}: serialized text differs from the input"
        );
    }
}

#[test]
fn crlf_and_lf_inputs_parse_alike() {
    let docs = corpus();
    let lf = &docs.iter().find(|(n, _)| n == "audio_only_opus").unwrap().1;
    let crlf = &docs.iter().find(|(n, _)| n == "crlf_endings").unwrap().1;
    assert!(crlf.contains("\r\n") && !lf.contains('\r'));
    let a = parse_sdp(lf, SdpType::Offer).unwrap();
    let b = parse_sdp(crlf, SdpType::Offer).unwrap();
    assert_eq!(a.media_sections, b.media_sections);
}

fn apply(op: &str, sd: &SessionDescription) -> SessionDescription {
    match op {
        "prefer_audio_pcmu" => prefer_codec(sd, &MediaKind::Audio, "PCMU").sd,
        "prefer_video_h264" => prefer_codec(sd, &MediaKind::Video, "H264").sd,
        "video_bandwidth_256" => set_receiver_bandwidth(sd, &MediaKind::Video, 256).unwrap().sd,
        "opus_stereo_0" => set_fmtp_param(sd, "opus", "stereo", "0").sd,
        "remove_nack" => modify_feedback(sd, FeedbackAction::RemoveNack).sd,
        "remove_fec" => modify_feedback(sd, FeedbackAction::RemoveFec).sd,
        other => panic!("unknown golden operation {other}"),
    }
}

#[test]
fn golden_rewrites() {
    let golden = corpus_dir().join("golden");
    let mut checked = 0;
    let mut ops = std::collections::BTreeSet::new();
    for entry in fs::read_dir(&golden).unwrap() {
        let path = entry.unwrap().path();
        let file = path.file_name().unwrap().to_string_lossy().into_owned();
        let Some(stem) = file.strip_suffix(".expected") else { continue };
        let (doc, op) = stem.split_once('.').unwrap();
        let input = fs::read_to_string(corpus_dir().join(format!("{doc}.sdp"))).unwrap();
        let expected = fs::read_to_string(&path).unwrap();
        let sd = parse_sdp(&input, sdp_type(doc)).unwrap();
        let got = serialize_sdp(&apply(op, &sd));
        assert_eq!(got, canonicalize_line_endings(&expected), "{file}");
        checked += 1;
        ops.insert(op.to_string());
    }
    assert_eq!(ops.len(), 6, "{ops:?}");
    assert!(checked >= 20);
}

#[test]
fn rewrites_are_idempotent_on_corpus() {
    let ops = [
        "prefer_audio_pcmu",
        "prefer_video_h264",
        "video_bandwidth_256",
        "opus_stereo_0",
        "remove_nack",
        "remove_fec",
    ];
    for (name, text) in corpus() {
        let sd = parse_sdp(&text, sdp_type(&name)).unwrap();
        for op in ops {
            let once = apply(op, &sd);
            assert_eq!(apply(op, &once), once, "{name} {op}");
        }
    }
}
