//! The builtin transform catalog.

use std::sync::Arc;

use wildmatch::WildMatch;

use super::catalog::{Catalog, CatalogEntry, EntrySource, ParamSpec, Params};
use super::{Payload, Transform, TransformCall, TransformError, TransformResult, WireMessage};
use crate::category::CategoryId;
use crate::http::{apply_header_rules, HeaderAction, HeaderDirection, HeaderList, HeaderRule, HttpResponse};
use crate::ice::{filter_candidates, CandidatePolicy};
use crate::media::{
    apply_encoding_limits, transform_constraints, transform_devices, transform_peer_config, ConstraintRule,
    DeviceKind, DeviceRule, EncodingParams, IceServer, PeerConfigRule, TrackKind,
};
use crate::scalar::Scalar;
use crate::sdp::{
    modify_feedback, prefer_codec, set_fmtp_param, set_media_policy, set_receiver_bandwidth, Direction,
    FeedbackAction, MediaKind, MediaPolicy, Munged, SessionDescription,
};
use crate::stats::{compute_mos, derive_metrics, StatsReport};

type Outcome = Result<TransformResult, TransformError>;

struct FnTransform<F>(F);

impl<F> Transform for FnTransform<F>
where
    F: Fn(&mut TransformCall<'_>, Payload) -> Outcome + Send + Sync,
{
    fn apply(&self, call: &mut TransformCall<'_>, payload: Payload) -> Outcome {
        (self.0)(call, payload)
    }
}

/// Wraps a closure as a [`Transform`].
pub fn transform_fn<F>(f: F) -> Arc<dyn Transform>
where
    F: Fn(&mut TransformCall<'_>, Payload) -> Outcome + Send + Sync + 'static,
{
    Arc::new(FnTransform(f))
}

fn entry<F>(
    category: CategoryId,
    name: &str,
    description: &str,
    strict_safe: bool,
    bindings: &[&str],
    params: Vec<ParamSpec>,
    factory: F,
) -> CatalogEntry
where
    F: Fn(&Params) -> Result<Arc<dyn Transform>, String> + Send + Sync + 'static,
{
    CatalogEntry {
        name: name.to_string(),
        category,
        description: description.to_string(),
        params,
        strict_safe,
        default_bindings: bindings.iter().map(|b| b.to_string()).collect(),
        source: EntrySource::Builtin,
        factory: Arc::new(factory),
    }
}

fn text(p: &Params, name: &str) -> String {
    p.str(name).unwrap_or_default().to_string()
}

fn opt_text(p: &Params, name: &str) -> Option<String> {
    p.str(name).filter(|s| !s.is_empty()).map(str::to_string)
}

fn munged(payload: Payload, f: impl FnOnce(&SessionDescription) -> Munged) -> Outcome {
    match payload {
        Payload::Session(sd) => Ok(TransformResult::Modified(Payload::Session(f(&sd).sd))),
        _ => Ok(TransformResult::Unchanged),
    }
}

fn truthy(v: Option<&Scalar>) -> bool {
    match v {
        Some(Scalar::Bool(b)) => *b,
        Some(Scalar::Num(n)) => *n > 0.0,
        Some(Scalar::Str(s)) => matches!(s.as_str(), "true" | "1" | "on" | "yes"),
        None => false,
    }
}

fn context_matches(wanted: &str, ctx: &str) -> bool {
    wanted == "*" || wanted == ctx
}

fn device_kind(s: &str) -> Option<DeviceKind> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
}

const KINDS: &[&str] = &["audio", "video"];
const DEVICE_KINDS: &[&str] = &["audioinput", "videoinput", "audiooutput"];

fn session(c: &mut Catalog) {
    let cat = CategoryId::Session;
    let kind = || ParamSpec::string("kind").required().choices(KINDS);
    c.register(entry(
        cat,
        "prefer_codec",
        "Moves the named codec to the front of every matching m= line.",
        true,
        &[],
        vec![kind(), ParamSpec::string("codec").required()],
        |p| {
            let kind: MediaKind = text(p, "kind").parse().unwrap();
            let codec = text(p, "codec");
            Ok(transform_fn(move |_, payload| munged(payload, |sd| prefer_codec(sd, &kind, &codec))))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "media_policy",
        "Disables a media kind or forces its direction.",
        true,
        &[],
        vec![
            kind(),
            ParamSpec::string("policy")
                .required()
                .choices(&["disable", "sendrecv", "sendonly", "recvonly", "inactive"]),
        ],
        |p| {
            let kind: MediaKind = text(p, "kind").parse().unwrap();
            let policy = match text(p, "policy").as_str() {
                "disable" => MediaPolicy::Disable,
                d => MediaPolicy::Direction(d.parse::<Direction>().map_err(|_| format!("bad policy {d}"))?),
            };
            Ok(transform_fn(move |_, payload| munged(payload, |sd| set_media_policy(sd, &kind, policy))))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "receiver_bandwidth",
        "Sets b=AS on every matching m= line.",
        true,
        &[],
        vec![kind(), ParamSpec::integer("kbps").required().range(1.0, 10_000_000.0)],
        |p| {
            let kind: MediaKind = text(p, "kind").parse().unwrap();
            let kbps = p.f64("kbps").unwrap() as i64;
            Ok(transform_fn(move |_, payload| match payload {
                Payload::Session(sd) => set_receiver_bandwidth(&sd, &kind, kbps)
                    .map(|m| TransformResult::Modified(Payload::Session(m.sd)))
                    .map_err(|e| TransformError::new("receiver_bandwidth", e.to_string())),
                _ => Ok(TransformResult::Unchanged),
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "fmtp_param",
        "Sets one fmtp parameter for every payload type of a codec.",
        true,
        &[],
        vec![
            ParamSpec::string("codec").required(),
            ParamSpec::string("key").required(),
            ParamSpec::string("value").required(),
        ],
        |p| {
            let (codec, key, value) = (text(p, "codec"), text(p, "key"), text(p, "value"));
            if key.is_empty() || key.contains([';', '=', ' ']) {
                return Err(format!("bad fmtp key `{key}`"));
            }
            Ok(transform_fn(move |_, payload| {
                munged(payload, |sd| set_fmtp_param(sd, &codec, &key, &value))
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "feedback",
        "Removes NACK or FEC feedback mechanisms.",
        true,
        &[],
        vec![ParamSpec::string("action")
            .required()
            .choices(&["remove_nack", "remove_fec", "require_fec"])],
        |p| {
            let action = match text(p, "action").as_str() {
                "remove_nack" => FeedbackAction::RemoveNack,
                "remove_fec" => FeedbackAction::RemoveFec,
                _ => FeedbackAction::RequireFec,
            };
            Ok(transform_fn(move |_, payload| munged(payload, |sd| modify_feedback(sd, action))))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "encoding_limits",
        "Tightens sender encoding parameters.",
        true,
        &[],
        vec![
            ParamSpec::integer("max_bitrate_bps").min(1.0),
            ParamSpec::number("max_framerate").min(1.0),
            ParamSpec::number("scale_resolution_down_by").min(1.0),
        ],
        |p| {
            let limits = EncodingParams {
                max_bitrate_bps: p.f64("max_bitrate_bps").map(|v| v as u64),
                max_framerate: p.f64("max_framerate"),
                scale_resolution_down_by: p.f64("scale_resolution_down_by"),
            };
            Ok(transform_fn(move |_, payload| match payload {
                Payload::Encoding(e) => Ok(TransformResult::Modified(Payload::Encoding(
                    apply_encoding_limits(&e, &limits),
                ))),
                _ => Ok(TransformResult::Unchanged),
            }))
        },
    ))
    .unwrap();
}

fn network(c: &mut Catalog) {
    c.register(entry(
        CategoryId::Network,
        "filter_candidates",
        "Drops ICE candidates by address family, scope or type.",
        true,
        &[],
        vec![
            ParamSpec::boolean("drop_ipv6"),
            ParamSpec::boolean("drop_private"),
            ParamSpec::boolean("relay_only"),
            ParamSpec::boolean("drop_host"),
        ],
        |p| {
            let policy = CandidatePolicy {
                drop_ipv6: p.bool("drop_ipv6"),
                drop_private: p.bool("drop_private"),
                relay_only: p.bool("relay_only"),
                drop_host: p.bool("drop_host"),
            };
            Ok(transform_fn(move |_, payload| match payload {
                Payload::Candidates(list) => Ok(TransformResult::Modified(Payload::Candidates(
                    filter_candidates(&list, &policy),
                ))),
                _ => Ok(TransformResult::Unchanged),
            }))
        },
    ))
    .unwrap();
}

fn media(c: &mut Catalog) {
    let cat = CategoryId::Media;
    c.register(entry(
        cat,
        "cap_constraints",
        "Caps or rewrites getUserMedia constraints.",
        true,
        &[],
        vec![
            ParamSpec::number("max_framerate").min(1.0),
            ParamSpec::number("max_height").min(1.0),
            ParamSpec::boolean("drop_audio"),
            ParamSpec::boolean("drop_video"),
            ParamSpec::string("audio_device"),
            ParamSpec::string("video_device"),
            ParamSpec::string("facing_mode").choices(&["user", "environment", "left", "right"]),
        ],
        |p| {
            let mut rules = Vec::new();
            if let Some(fps) = p.f64("max_framerate") {
                rules.push(ConstraintRule::CapFramerate { fps });
            }
            if let Some(height) = p.f64("max_height") {
                rules.push(ConstraintRule::CapResolution { height });
            }
            if p.bool("drop_audio") {
                rules.push(ConstraintRule::DropAudio);
            }
            if p.bool("drop_video") {
                rules.push(ConstraintRule::DropVideo);
            }
            if let Some(device_id) = opt_text(p, "audio_device") {
                rules.push(ConstraintRule::ForceDevice { kind: TrackKind::Audio, device_id });
            }
            if let Some(device_id) = opt_text(p, "video_device") {
                rules.push(ConstraintRule::ForceDevice { kind: TrackKind::Video, device_id });
            }
            if let Some(facing_mode) = opt_text(p, "facing_mode") {
                rules.push(ConstraintRule::ForceFacingMode { facing_mode });
            }
            Ok(transform_fn(move |_, payload| match payload {
                Payload::Constraints(c) => Ok(TransformResult::Modified(Payload::Constraints(
                    transform_constraints(&c, &rules),
                ))),
                _ => Ok(TransformResult::Unchanged),
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "adaptive_caps",
        "Caps video frame rate and height while a control flag is set.",
        true,
        &["controls"],
        vec![
            ParamSpec::string("control").default("cpu.overload"),
            ParamSpec::number("max_framerate").min(1.0).default(10.0),
            ParamSpec::number("max_height").min(1.0).default(320.0),
        ],
        |p| {
            let control = text(p, "control");
            let rules = vec![
                ConstraintRule::CapFramerate { fps: p.f64("max_framerate").unwrap() },
                ConstraintRule::CapResolution { height: p.f64("max_height").unwrap() },
            ];
            Ok(transform_fn(move |call, payload| {
                let controls = call
                    .bound
                    .controls()
                    .ok_or_else(|| TransformError::new("adaptive_caps", "controls binding not requested"))?;
                match payload {
                    Payload::Constraints(c) if truthy(controls.get(&control)) => Ok(TransformResult::Modified(
                        Payload::Constraints(transform_constraints(&c, &rules)),
                    )),
                    _ => Ok(TransformResult::Unchanged),
                }
            }))
        },
    ))
    .unwrap();
}

fn devices(c: &mut Catalog) {
    c.register(entry(
        CategoryId::Devices,
        "device_policy",
        "Hides, renames or adds entries in the device list.",
        true,
        &[],
        vec![
            ParamSpec::string("hide_kind").choices(DEVICE_KINDS),
            ParamSpec::string("hide_label_pattern"),
            ParamSpec::boolean("expose_default_only"),
            ParamSpec::boolean("randomize_labels"),
            ParamSpec::string("add_dummy_kind").choices(DEVICE_KINDS),
            ParamSpec::string("add_dummy_label").default("Virtual Device"),
        ],
        |p| {
            let mut rules = Vec::new();
            if let Some(kind) = p.str("hide_kind").and_then(device_kind) {
                rules.push(DeviceRule::HideKind { kind });
            }
            if let Some(pattern) = opt_text(p, "hide_label_pattern") {
                rules.push(DeviceRule::HideLabelPattern { pattern });
            }
            if p.bool("expose_default_only") {
                rules.push(DeviceRule::ExposeDefaultOnly);
            }
            if p.bool("randomize_labels") {
                rules.push(DeviceRule::RandomizeLabels);
            }
            if let Some(kind) = p.str("add_dummy_kind").and_then(device_kind) {
                rules.push(DeviceRule::AddDummy { kind, label: text(p, "add_dummy_label") });
            }
            Ok(transform_fn(move |call, payload| match payload {
                Payload::Devices(list) => Ok(TransformResult::Modified(Payload::Devices(transform_devices(
                    &list, &rules, call.seed,
                )))),
                _ => Ok(TransformResult::Unchanged),
            }))
        },
    ))
    .unwrap();
}

fn connect(c: &mut Catalog) {
    c.register(entry(
        CategoryId::Connect,
        "peer_policy",
        "Rewrites the ICE server list and transport policy of new connections.",
        true,
        &[],
        vec![
            ParamSpec::boolean("strip_servers"),
            ParamSpec::string("relay_url"),
            ParamSpec::string("username"),
            ParamSpec::string("credential"),
            ParamSpec::boolean("relay_only"),
        ],
        |p| {
            let mut rules = Vec::new();
            if p.bool("strip_servers") {
                rules.push(PeerConfigRule::StripServers);
            }
            if let Some(url) = opt_text(p, "relay_url") {
                let server = IceServer {
                    urls: vec![url],
                    username: opt_text(p, "username"),
                    credential: opt_text(p, "credential"),
                };
                server.validate().map_err(|e| e.to_string())?;
                rules.push(PeerConfigRule::InjectServer { server });
            }
            if p.bool("relay_only") {
                rules.push(PeerConfigRule::RelayOnly);
            }
            Ok(transform_fn(move |_, payload| match payload {
                Payload::PeerConfig(cfg) => transform_peer_config(&cfg, &rules)
                    .map(|c| TransformResult::Modified(Payload::PeerConfig(c)))
                    .map_err(|e| TransformError::new("peer_policy", e.to_string())),
                _ => Ok(TransformResult::Unchanged),
            }))
        },
    ))
    .unwrap();
}

const PREVIOUS_REPORT: &str = "previous_report";

fn stats(c: &mut Catalog) {
    c.register(entry(
        CategoryId::Stats,
        "quality_monitor",
        "Derives bitrate, loss, jitter, RTT and MOS from successive reports and publishes them as controls.",
        true,
        &["controls", "data"],
        vec![
            ParamSpec::string("prefix").default("quality"),
            ParamSpec::integer("interval_ms").min(100.0),
        ],
        |p| {
            let prefix = text(p, "prefix");
            Ok(transform_fn(move |call, payload| {
                let Payload::Stats(report) = payload else {
                    return Ok(TransformResult::Unchanged);
                };
                let err = |e: crate::stats::StatsError| TransformError::new("quality_monitor", e.to_string());
                let previous: Option<StatsReport> = call
                    .ctx
                    .state
                    .get(PREVIOUS_REPORT)
                    .and_then(|v| serde_json::from_value(v.clone()).ok());
                if let Some(prev) = previous {
                    let m = derive_metrics(&prev, &report).map_err(err)?;
                    let q = compute_mos(
                        m.packet_loss_rate.unwrap_or(0.0),
                        m.rtt_ms.unwrap_or(0.0),
                        m.jitter_ms.unwrap_or(0.0),
                    )
                    .map_err(err)?;
                    call.ctx.state.insert("mos".into(), q.mos.into());
                    if let Some(controls) = call.bound.controls() {
                        controls.set(&format!("{prefix}.mos"), q.mos);
                        controls.set(&format!("{prefix}.r_factor"), q.r_factor);
                        let optional = [
                            ("loss", m.packet_loss_rate),
                            ("rtt_ms", m.rtt_ms),
                            ("jitter_ms", m.jitter_ms),
                            ("send_bitrate_bps", m.send_bitrate_bps),
                            ("recv_bitrate_bps", m.recv_bitrate_bps),
                        ];
                        for (name, value) in optional {
                            if let Some(v) = value {
                                controls.set(&format!("{prefix}.{name}"), v);
                            }
                        }
                    }
                }
                let stored = serde_json::to_value(&report).unwrap_or_default();
                call.ctx.state.insert(PREVIOUS_REPORT.into(), stored);
                Ok(TransformResult::Unchanged)
            }))
        },
    ))
    .unwrap();
}

fn rejected(reason: &str) -> Outcome {
    Ok(TransformResult::ShortCircuit(Payload::Rejected {
        reason: reason.to_string(),
    }))
}

fn text_message(payload: Payload, f: impl FnOnce(&str) -> Option<String>) -> Outcome {
    match payload {
        Payload::Message(WireMessage::Text(t)) => Ok(match f(&t) {
            Some(new) => TransformResult::Modified(Payload::Message(WireMessage::Text(new))),
            None => TransformResult::Unchanged,
        }),
        _ => Ok(TransformResult::Unchanged),
    }
}

fn count_messages(call: &mut TransformCall<'_>) {
    let n = call.ctx.state.get("messages").and_then(|v| v.as_u64()).unwrap_or(0);
    call.ctx.state.insert("messages".into(), (n + 1).into());
}

fn data(c: &mut Catalog) {
    let cat = CategoryId::Data;
    c.register(entry(
        cat,
        "disable_data",
        "Refuses to create data channels or send on them.",
        true,
        &[],
        vec![],
        |_| Ok(transform_fn(|_, _| rejected("data channels are disabled"))),
    ))
    .unwrap();
    c.register(entry(
        cat,
        "rewrite_text",
        "Rewrites text messages on a data channel.",
        true,
        &[],
        vec![
            ParamSpec::string("mode").required().choices(&["upper", "lower", "prefix"]),
            ParamSpec::string("prefix").default(""),
            ParamSpec::string("context").default("send"),
        ],
        |p| {
            let (mode, prefix, context) = (text(p, "mode"), text(p, "prefix"), text(p, "context"));
            Ok(transform_fn(move |call, payload| {
                if !context_matches(&context, &call.ctx.context) {
                    return Ok(TransformResult::Unchanged);
                }
                text_message(payload, |t| {
                    Some(match mode.as_str() {
                        "upper" => t.to_uppercase(),
                        "lower" => t.to_lowercase(),
                        _ => format!("{prefix}{t}"),
                    })
                })
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "count_messages",
        "Counts data-channel messages in the session state.",
        true,
        &[],
        vec![],
        |_| {
            Ok(transform_fn(|call, payload| {
                if matches!(payload, Payload::Message(_)) {
                    count_messages(call);
                }
                Ok(TransformResult::Unchanged)
            }))
        },
    ))
    .unwrap();
}

fn rewrite_url_entry(category: CategoryId) -> CatalogEntry {
    entry(
        category,
        "rewrite_url",
        "Redirects URLs starting with `from` to `to`.",
        false,
        &[],
        vec![ParamSpec::string("from").required(), ParamSpec::string("to").required()],
        |p| {
            let (from, to) = (text(p, "from"), text(p, "to"));
            if from.is_empty() {
                return Err("`from` must not be empty".into());
            }
            let rewrite = move |url: &str| url.strip_prefix(from.as_str()).map(|rest| format!("{to}{rest}"));
            Ok(transform_fn(move |_, payload| {
                Ok(match payload {
                    Payload::Url(u) => match rewrite(&u) {
                        Some(new) => TransformResult::Modified(Payload::Url(new)),
                        None => TransformResult::Unchanged,
                    },
                    Payload::HttpRequest(mut r) => match rewrite(&r.url) {
                        Some(new) => {
                            r.url = new;
                            TransformResult::Modified(Payload::HttpRequest(r))
                        }
                        None => TransformResult::Unchanged,
                    },
                    _ => TransformResult::Unchanged,
                })
            }))
        },
    )
}

fn socket(c: &mut Catalog) {
    let cat = CategoryId::Socket;
    c.register(entry(
        cat,
        "block_socket",
        "Refuses every WebSocket connection attempt.",
        true,
        &[],
        vec![],
        |_| {
            Ok(transform_fn(|_, payload| match payload {
                Payload::Url(_) => rejected("websocket blocked"),
                _ => Ok(TransformResult::Unchanged),
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "fake_reply",
        "Answers matching text messages locally instead of forwarding them.",
        true,
        &[],
        vec![
            ParamSpec::string("pattern").required(),
            ParamSpec::string("reply").required(),
            ParamSpec::string("context").default("send"),
        ],
        |p| {
            let pattern = WildMatch::new(&text(p, "pattern"));
            let (reply, context) = (text(p, "reply"), text(p, "context"));
            Ok(transform_fn(move |call, payload| match &payload {
                Payload::Message(WireMessage::Text(t))
                    if context_matches(&context, &call.ctx.context) && pattern.matches(t) =>
                {
                    Ok(TransformResult::ShortCircuit(Payload::Message(WireMessage::Text(reply.clone()))))
                }
                _ => Ok(TransformResult::Unchanged),
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "rewrite_message",
        "Replaces every occurrence of `find` in text messages.",
        true,
        &[],
        vec![
            ParamSpec::string("find").required(),
            ParamSpec::string("replace").default(""),
            ParamSpec::string("context").default("*"),
        ],
        |p| {
            let (find, replace, context) = (text(p, "find"), text(p, "replace"), text(p, "context"));
            if find.is_empty() {
                return Err("`find` must not be empty".into());
            }
            Ok(transform_fn(move |call, payload| {
                if !context_matches(&context, &call.ctx.context) {
                    return Ok(TransformResult::Unchanged);
                }
                text_message(payload, |t| t.contains(&find).then(|| t.replace(&find, &replace)))
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "count_messages",
        "Counts signaling messages in the session state.",
        true,
        &[],
        vec![],
        |_| {
            Ok(transform_fn(|call, payload| {
                if matches!(payload, Payload::Message(_)) {
                    count_messages(call);
                }
                Ok(TransformResult::Unchanged)
            }))
        },
    ))
    .unwrap();
    c.register(rewrite_url_entry(cat)).unwrap();
}

fn remove_header(headers: &mut HeaderList, name: &str) {
    headers.retain(|(k, _)| !k.eq_ignore_ascii_case(name));
}

fn request(c: &mut Catalog) {
    let cat = CategoryId::Request;
    c.register(entry(
        cat,
        "fake_response",
        "Answers matching HTTP requests locally.",
        true,
        &[],
        vec![
            ParamSpec::string("url_pattern").required(),
            ParamSpec::integer("status").range(100.0, 599.0).default(200),
            ParamSpec::string("body").default(""),
            ParamSpec::string("content_type").default("application/json"),
        ],
        |p| {
            let pattern = WildMatch::new(&text(p, "url_pattern"));
            let mut response = HttpResponse::new(p.f64("status").unwrap() as u16, text(p, "body"));
            response.headers.push(("content-type".into(), text(p, "content_type")));
            Ok(transform_fn(move |_, payload| {
                let url = match &payload {
                    Payload::HttpRequest(r) => r.url.as_str(),
                    Payload::Url(u) => u.as_str(),
                    _ => return Ok(TransformResult::Unchanged),
                };
                Ok(if pattern.matches(url) {
                    TransformResult::ShortCircuit(Payload::HttpResponse(response.clone()))
                } else {
                    TransformResult::Unchanged
                })
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "correlate",
        "Tags each request with an id and echoes it on the matching response.",
        true,
        &["data"],
        vec![ParamSpec::string("header").default("x-correlation-id")],
        |p| {
            let header = text(p, "header");
            Ok(transform_fn(move |call, payload| {
                let state = &mut call.ctx.state;
                Ok(match payload {
                    Payload::HttpRequest(mut r) => {
                        let n = state.get("requests").and_then(|v| v.as_u64()).unwrap_or(0) + 1;
                        let id = format!("{}-{n}", call.ctx.session_id);
                        state.insert("requests".into(), n.into());
                        state.insert("correlation_id".into(), id.clone().into());
                        remove_header(&mut r.headers, &header);
                        r.headers.push((header.clone(), id));
                        TransformResult::Modified(Payload::HttpRequest(r))
                    }
                    Payload::HttpResponse(mut r) => match state.get("correlation_id").and_then(|v| v.as_str()) {
                        Some(id) => {
                            remove_header(&mut r.headers, &header);
                            r.headers.push((header.clone(), id.to_string()));
                            TransformResult::Modified(Payload::HttpResponse(r))
                        }
                        None => TransformResult::Unchanged,
                    },
                    _ => TransformResult::Unchanged,
                })
            }))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "strip_cookies",
        "Removes Cookie from requests and Set-Cookie from responses.",
        true,
        &[],
        vec![],
        |_| {
            Ok(transform_fn(|_, payload| {
                Ok(match payload {
                    Payload::HttpRequest(mut r) => {
                        remove_header(&mut r.headers, "cookie");
                        TransformResult::Modified(Payload::HttpRequest(r))
                    }
                    Payload::HttpResponse(mut r) => {
                        remove_header(&mut r.headers, "set-cookie");
                        TransformResult::Modified(Payload::HttpResponse(r))
                    }
                    _ => TransformResult::Unchanged,
                })
            }))
        },
    ))
    .unwrap();
    c.register(rewrite_url_entry(cat)).unwrap();
}

pub const CSP_HEADERS: &[&str] = &[
    "content-security-policy",
    "content-security-policy-report-only",
    "x-frame-options",
];

fn headers_transform(rules: Vec<HeaderRule>) -> Arc<dyn Transform> {
    transform_fn(move |_, payload| match payload {
        Payload::Headers { direction, headers } => Ok(TransformResult::Modified(Payload::Headers {
            direction,
            headers: apply_header_rules(&headers, direction, &rules),
        })),
        _ => Ok(TransformResult::Unchanged),
    })
}

fn security(c: &mut Catalog) {
    let cat = CategoryId::Security;
    c.register(entry(
        cat,
        "relax_csp",
        "Removes content-security-policy and x-frame-options from responses.",
        true,
        &[],
        vec![],
        |_| {
            Ok(headers_transform(
                CSP_HEADERS
                    .iter()
                    .map(|h| HeaderRule::remove(HeaderDirection::Response, h))
                    .collect(),
            ))
        },
    ))
    .unwrap();
    c.register(entry(
        cat,
        "header_rule",
        "Removes, sets or appends one header.",
        true,
        &[],
        vec![
            ParamSpec::string("direction").required().choices(&["request", "response"]),
            ParamSpec::string("action").required().choices(&["remove", "set", "append"]),
            ParamSpec::string("name").required(),
            ParamSpec::string("value"),
        ],
        |p| {
            let rule = HeaderRule {
                direction: if text(p, "direction") == "request" {
                    HeaderDirection::Request
                } else {
                    HeaderDirection::Response
                },
                action: match text(p, "action").as_str() {
                    "remove" => HeaderAction::Remove,
                    "set" => HeaderAction::Set,
                    _ => HeaderAction::Append,
                },
                header_name: text(p, "name"),
                value: p.str("value").map(str::to_string),
            };
            rule.validate().map_err(|e| e.to_string())?;
            Ok(headers_transform(vec![rule]))
        },
    ))
    .unwrap();
}

fn cpu(c: &mut Catalog) {
    c.register(entry(
        CategoryId::Cpu,
        "cpu_threshold",
        "Sets a boolean control while total CPU load is at or above a threshold.",
        true,
        &["controls"],
        vec![
            ParamSpec::number("threshold").range(0.0, 100.0).default(75.0),
            ParamSpec::string("control").default("cpu.overload"),
        ],
        |p| {
            let threshold = p.f64("threshold").unwrap();
            let control = text(p, "control");
            Ok(transform_fn(move |call, payload| {
                let Payload::Cpu(sample) = payload else {
                    return Ok(TransformResult::Unchanged);
                };
                let controls = call
                    .bound
                    .controls()
                    .ok_or_else(|| TransformError::new("cpu_threshold", "controls binding not requested"))?;
                let over = sample.total_load_percent >= threshold;
                if controls.get(&control) != Some(&Scalar::Bool(over)) {
                    controls.set(&control, over);
                }
                Ok(TransformResult::Unchanged)
            }))
        },
    ))
    .unwrap();
}

pub(super) fn register_all(c: &mut Catalog) {
    session(c);
    network(c);
    media(c);
    devices(c);
    connect(c);
    stats(c);
    data(c);
    socket(c);
    request(c);
    security(c);
    cpu(c);
}
