//! Capture constraints, device lists, peer configuration and sender
//! encoding limits.
//!
//! All caps tighten: a rule never raises a numeric bound that is already
//! lower than the cap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wildmatch::WildMatch;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MediaConfigError {
    #[error("invalid ICE server url `{0}`: must start with stun:, turn: or turns:")]
    InvalidServerUrl(String),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NumericBound {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ideal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl NumericBound {
    fn cap(&mut self, limit: f64) {
        let max = self.max.map_or(limit, |m| m.min(limit));
        self.max = Some(max);
        if let Some(ideal) = self.ideal {
            self.ideal = Some(ideal.min(max));
        }
    }

    fn validate(&self, name: &str) -> Result<(), MediaConfigError> {
        for v in [self.ideal, self.max].into_iter().flatten() {
            if !(v.is_finite() && v > 0.0) {
                return Err(MediaConfigError::InvalidConstraint(format!("{name} must be > 0")));
            }
        }
        if let (Some(ideal), Some(max)) = (self.ideal, self.max) {
            if max < ideal {
                return Err(MediaConfigError::InvalidConstraint(format!(
                    "{name}.max {max} is below ideal {ideal}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSet {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<NumericBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<NumericBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_rate: Option<NumericBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub facing_mode: Option<String>,
}

/// `true`/`false` or a constraint map, as in `getUserMedia`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackConstraints {
    Enabled(bool),
    Constrained(ConstraintSet),
}

impl Default for TrackConstraints {
    fn default() -> Self {
        TrackConstraints::Enabled(false)
    }
}

impl TrackConstraints {
    pub fn is_requested(&self) -> bool {
        !matches!(self, TrackConstraints::Enabled(false))
    }

    /// Constraint map to edit; `true` becomes an empty map, `false` yields
    /// nothing.
    fn set_mut(&mut self) -> Option<&mut ConstraintSet> {
        if let TrackConstraints::Enabled(true) = self {
            *self = TrackConstraints::Constrained(ConstraintSet::default());
        }
        match self {
            TrackConstraints::Constrained(set) => Some(set),
            TrackConstraints::Enabled(_) => None,
        }
    }

    pub fn constraints(&self) -> Option<&ConstraintSet> {
        match self {
            TrackConstraints::Constrained(set) => Some(set),
            TrackConstraints::Enabled(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediaConstraints {
    pub audio: TrackConstraints,
    pub video: TrackConstraints,
}

impl MediaConstraints {
    pub fn validate(&self) -> Result<(), MediaConfigError> {
        for set in [self.audio.constraints(), self.video.constraints()].into_iter().flatten() {
            for (name, bound) in [
                ("width", &set.width),
                ("height", &set.height),
                ("frame_rate", &set.frame_rate),
            ] {
                if let Some(b) = bound {
                    b.validate(name)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackKind {
    Audio,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ConstraintRule {
    CapFramerate { fps: f64 },
    /// Caps the height in lines, e.g. 320 for "320p".
    CapResolution { height: f64 },
    DropAudio,
    DropVideo,
    ForceDevice { kind: TrackKind, device_id: String },
    ForceFacingMode { facing_mode: String },
}

pub fn transform_constraints(c: &MediaConstraints, rules: &[ConstraintRule]) -> MediaConstraints {
    let mut out = c.clone();
    for rule in rules {
        match rule {
            ConstraintRule::CapFramerate { fps } => {
                if let Some(set) = out.video.set_mut() {
                    set.frame_rate.get_or_insert_with(NumericBound::default).cap(*fps);
                }
            }
            ConstraintRule::CapResolution { height } => {
                if let Some(set) = out.video.set_mut() {
                    set.height.get_or_insert_with(NumericBound::default).cap(*height);
                }
            }
            ConstraintRule::DropAudio => out.audio = TrackConstraints::Enabled(false),
            ConstraintRule::DropVideo => out.video = TrackConstraints::Enabled(false),
            ConstraintRule::ForceDevice { kind, device_id } => {
                let track = match kind {
                    TrackKind::Audio => &mut out.audio,
                    TrackKind::Video => &mut out.video,
                };
                if let Some(set) = track.set_mut() {
                    set.device_id = Some(device_id.clone());
                }
            }
            ConstraintRule::ForceFacingMode { facing_mode } => {
                if let Some(set) = out.video.set_mut() {
                    set.facing_mode = Some(facing_mode.clone());
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Audioinput,
    Videoinput,
    Audiooutput,
}

impl DeviceKind {
    fn pseudonym_prefix(self) -> &'static str {
        match self {
            DeviceKind::Audioinput => "Microphone",
            DeviceKind::Videoinput => "Camera",
            DeviceKind::Audiooutput => "Speaker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceInfo {
    pub device_id: String,
    pub kind: DeviceKind,
    pub label: String,
    #[serde(default)]
    pub group_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DeviceRule {
    HideKind { kind: DeviceKind },
    /// `*` and `?` wildcards, matched against the whole label.
    HideLabelPattern { pattern: String },
    RandomizeLabels,
    ExposeDefaultOnly,
    AddDummy { kind: DeviceKind, label: String },
}

pub fn transform_devices(list: &[DeviceInfo], rules: &[DeviceRule], seed: u64) -> Vec<DeviceInfo> {
    let mut out = list.to_vec();
    for rule in rules {
        match rule {
            DeviceRule::HideKind { kind } => out.retain(|d| d.kind != *kind),
            DeviceRule::HideLabelPattern { pattern } => {
                let glob = WildMatch::new(pattern);
                out.retain(|d| !glob.matches(&d.label));
            }
            DeviceRule::RandomizeLabels => randomize_labels(&mut out, seed),
            DeviceRule::ExposeDefaultOnly => {
                let mut seen = Vec::new();
                out.retain(|d| {
                    if seen.contains(&d.kind) {
                        false
                    } else {
                        seen.push(d.kind);
                        true
                    }
                });
            }
            DeviceRule::AddDummy { kind, label } => {
                let mut n = 1;
                while out.iter().any(|d| d.device_id == format!("dummy-{n}")) {
                    n += 1;
                }
                out.push(DeviceInfo {
                    device_id: format!("dummy-{n}"),
                    kind: *kind,
                    label: label.clone(),
                    group_id: format!("dummy-group-{n}"),
                });
            }
        }
    }
    out
}

fn randomize_labels(devices: &mut [DeviceInfo], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in devices.iter_mut() {
        loop {
            let tag: u32 = rng.random_range(0..0x100_0000);
            let label = format!("{} {tag:06x}", d.kind.pseudonym_prefix());
            if label != d.label {
                d.label = label;
                break;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IceTransportPolicy {
    #[default]
    All,
    Relay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IceServer {
    pub urls: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub username: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential: Option<String>,
}

impl IceServer {
    pub fn new(url: &str) -> Self {
        IceServer {
            urls: vec![url.to_string()],
            username: None,
            credential: None,
        }
    }

    pub fn validate(&self) -> Result<(), MediaConfigError> {
        if self.urls.is_empty() {
            return Err(MediaConfigError::InvalidServerUrl(String::new()));
        }
        for url in &self.urls {
            if !["stun:", "turn:", "turns:"].iter().any(|p| url.starts_with(p)) {
                return Err(MediaConfigError::InvalidServerUrl(url.clone()));
            }
        }
        Ok(())
    }

    pub fn is_relay(&self) -> bool {
        self.urls
            .iter()
            .any(|u| u.starts_with("turn:") || u.starts_with("turns:"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeerConfig {
    pub ice_servers: Vec<IceServer>,
    pub ice_transport_policy: IceTransportPolicy,
}

impl PeerConfig {
    pub fn validate(&self) -> Result<(), MediaConfigError> {
        self.ice_servers.iter().try_for_each(IceServer::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PeerConfigRule {
    InjectServer { server: IceServer },
    StripServers,
    RelayOnly,
}

pub fn transform_peer_config(
    cfg: &PeerConfig,
    rules: &[PeerConfigRule],
) -> Result<PeerConfig, MediaConfigError> {
    let mut out = cfg.clone();
    for rule in rules {
        match rule {
            PeerConfigRule::InjectServer { server } => {
                server.validate()?;
                out.ice_servers.push(server.clone());
            }
            PeerConfigRule::StripServers => out.ice_servers.clear(),
            PeerConfigRule::RelayOnly => out.ice_transport_policy = IceTransportPolicy::Relay,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_bitrate_bps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_framerate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_resolution_down_by: Option<f64>,
}

impl EncodingParams {
    pub fn validate(&self) -> Result<(), MediaConfigError> {
        if self.max_bitrate_bps == Some(0) {
            return Err(MediaConfigError::InvalidConstraint("max_bitrate_bps must be > 0".into()));
        }
        if self.max_framerate.is_some_and(|f| !(f.is_finite() && f > 0.0)) {
            return Err(MediaConfigError::InvalidConstraint("max_framerate must be > 0".into()));
        }
        if self
            .scale_resolution_down_by
            .is_some_and(|s| !(s.is_finite() && s >= 1.0))
        {
            return Err(MediaConfigError::InvalidConstraint(
                "scale_resolution_down_by must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Field-wise tightening: smaller bitrate and framerate, larger downscale.
pub fn apply_encoding_limits(p: &EncodingParams, limits: &EncodingParams) -> EncodingParams {
    fn tighter<T: PartialOrd + Copy>(a: Option<T>, b: Option<T>, keep_smaller: bool) -> Option<T> {
        match (a, b) {
            (Some(a), Some(b)) => Some(if (a < b) == keep_smaller { a } else { b }),
            (a, None) => a,
            (None, b) => b,
        }
    }
    EncodingParams {
        max_bitrate_bps: tighter(p.max_bitrate_bps, limits.max_bitrate_bps, true),
        max_framerate: tighter(p.max_framerate, limits.max_framerate, true),
        scale_resolution_down_by: tighter(p.scale_resolution_down_by, limits.scale_resolution_down_by, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn constraints(v: serde_json::Value) -> MediaConstraints {
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn caps_ten_fps_320p() {
        let c = constraints(json!({"video": {"frame_rate": {"ideal": 30}}}));
        let out = transform_constraints(
            &c,
            &[
                ConstraintRule::CapFramerate { fps: 10.0 },
                ConstraintRule::CapResolution { height: 320.0 },
            ],
        );
        let v = out.video.constraints().unwrap();
        assert_eq!(v.frame_rate.unwrap().max, Some(10.0));
        assert_eq!(v.frame_rate.unwrap().ideal, Some(10.0));
        assert_eq!(v.height.unwrap().max, Some(320.0));
        out.validate().unwrap();
    }

    #[test]
    fn drop_audio() {
        let c = constraints(json!({"audio": true, "video": true}));
        let out = transform_constraints(&c, &[ConstraintRule::DropAudio]);
        assert_eq!(out.audio, TrackConstraints::Enabled(false));
        assert_eq!(out.video, TrackConstraints::Enabled(true));
    }

    #[test]
    fn caps_never_loosen() {
        let c = constraints(json!({"video": {"frame_rate": {"max": 5}}}));
        let out = transform_constraints(&c, &[ConstraintRule::CapFramerate { fps: 10.0 }]);
        assert_eq!(out.video.constraints().unwrap().frame_rate.unwrap().max, Some(5.0));
    }

    #[test]
    fn caps_skip_disabled_video() {
        let c = constraints(json!({"audio": true, "video": false}));
        let out = transform_constraints(&c, &[ConstraintRule::CapFramerate { fps: 10.0 }]);
        assert_eq!(out, c);
    }

    #[test]
    fn force_device_and_facing_mode() {
        let c = constraints(json!({"audio": true, "video": true}));
        let out = transform_constraints(
            &c,
            &[
                ConstraintRule::ForceDevice { kind: TrackKind::Audio, device_id: "mic-2".into() },
                ConstraintRule::ForceFacingMode { facing_mode: "environment".into() },
            ],
        );
        assert_eq!(out.audio.constraints().unwrap().device_id.as_deref(), Some("mic-2"));
        assert_eq!(out.video.constraints().unwrap().facing_mode.as_deref(), Some("environment"));
    }

    #[test]
    fn constraint_validation() {
        assert!(constraints(json!({"video": {"width": {"ideal": 640, "max": 320}}})).validate().is_err());
        assert!(constraints(json!({"video": {"frame_rate": {"max": 0}}})).validate().is_err());
        assert!(constraints(json!({"video": {"height": {"ideal": 720, "max": 1080}}})).validate().is_ok());
    }

    fn devices() -> Vec<DeviceInfo> {
        let d = |id: &str, kind, label: &str| DeviceInfo {
            device_id: id.into(),
            kind,
            label: label.into(),
            group_id: "g".into(),
        };
        vec![
            d("a1", DeviceKind::Audioinput, "Bad Mic (USB)"),
            d("a2", DeviceKind::Audioinput, "Built-in Microphone"),
            d("v1", DeviceKind::Videoinput, "FaceTime HD Camera"),
            d("v2", DeviceKind::Videoinput, "Logitech BRIO"),
            d("o1", DeviceKind::Audiooutput, "Speakers"),
        ]
    }

    #[test]
    fn hide_rules() {
        let out = transform_devices(&devices(), &[DeviceRule::HideKind { kind: DeviceKind::Videoinput }], 0);
        assert!(out.iter().all(|d| d.kind != DeviceKind::Videoinput));
        assert_eq!(out.len(), 3);
        let out = transform_devices(
            &devices(),
            &[DeviceRule::HideLabelPattern { pattern: "Bad Mic*".into() }],
            0,
        );
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|d| d.device_id != "a1"));
    }

    #[test]
    fn randomize_keeps_ids_and_changes_labels() {
        let input = devices();
        let out = transform_devices(&input, &[DeviceRule::RandomizeLabels], 42);
        assert_eq!(out.len(), input.len());
        for (a, b) in input.iter().zip(&out) {
            assert_eq!(a.device_id, b.device_id);
            assert_eq!(a.kind, b.kind);
            assert_ne!(a.label, b.label);
        }
        assert_eq!(out, transform_devices(&input, &[DeviceRule::RandomizeLabels], 42));
        assert_ne!(out, transform_devices(&input, &[DeviceRule::RandomizeLabels], 43));
    }

    #[test]
    fn default_only_and_dummy() {
        let out = transform_devices(&devices(), &[DeviceRule::ExposeDefaultOnly], 0);
        let ids: Vec<_> = out.iter().map(|d| d.device_id.as_str()).collect();
        assert_eq!(ids, vec!["a1", "v1", "o1"]);
        let add = DeviceRule::AddDummy { kind: DeviceKind::Videoinput, label: "Virtual Cam".into() };
        let out = transform_devices(&devices(), &[add.clone(), add], 0);
        assert_eq!(out.len(), 7);
        assert_eq!(out[5].device_id, "dummy-1");
        assert_eq!(out[6].device_id, "dummy-2");
    }

    fn public_cfg() -> PeerConfig {
        PeerConfig {
            ice_servers: vec![
                IceServer::new("stun:stun.l.google.com:19302"),
                IceServer::new("stun:stun.example.org:3478"),
                IceServer::new("turn:turn.example.org:3478"),
            ],
            ice_transport_policy: IceTransportPolicy::All,
        }
    }

    #[test]
    fn enterprise_composition() {
        let approved = IceServer {
            urls: vec!["turns:relay.corp.example:443".into()],
            username: Some("corp".into()),
            credential: Some("secret".into()),
        };
        let out = transform_peer_config(
            &public_cfg(),
            &[
                PeerConfigRule::StripServers,
                PeerConfigRule::InjectServer { server: approved.clone() },
                PeerConfigRule::RelayOnly,
            ],
        )
        .unwrap();
        assert_eq!(out.ice_servers, vec![approved]);
        assert_eq!(out.ice_transport_policy, IceTransportPolicy::Relay);
    }

    #[test]
    fn inject_rejects_http() {
        assert_eq!(
            transform_peer_config(
                &public_cfg(),
                &[PeerConfigRule::InjectServer { server: IceServer::new("http://x") }]
            ),
            Err(MediaConfigError::InvalidServerUrl("http://x".into()))
        );
        assert_eq!(transform_peer_config(&public_cfg(), &[]).unwrap(), public_cfg());
    }

    #[test]
    fn encoding_limits() {
        let limit = EncodingParams { max_bitrate_bps: Some(300_000), ..Default::default() };
        assert_eq!(apply_encoding_limits(&EncodingParams::default(), &limit).max_bitrate_bps, Some(300_000));
        let p = EncodingParams { max_bitrate_bps: Some(250_000), ..Default::default() };
        assert_eq!(apply_encoding_limits(&p, &limit).max_bitrate_bps, Some(250_000));
        let p = EncodingParams {
            max_bitrate_bps: Some(1),
            max_framerate: Some(30.0),
            scale_resolution_down_by: Some(2.0),
        };
        assert_eq!(apply_encoding_limits(&p, &EncodingParams::default()), p);
        let tight = apply_encoding_limits(
            &p,
            &EncodingParams { scale_resolution_down_by: Some(4.0), max_framerate: Some(15.0), ..Default::default() },
        );
        assert_eq!(tight.scale_resolution_down_by, Some(4.0));
        assert_eq!(tight.max_framerate, Some(15.0));
    }
}
