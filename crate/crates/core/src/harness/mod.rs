//! Simulated endpoints for exercising every category without a browser:
//! offer/answer, trickled candidates with connectivity checks, data
//! channels and synthetic stats, plus a scenario runner.

mod endpoint;
mod link;
mod network;
mod pairing;
mod scenario;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

pub use endpoint::{
    build_answer, build_offer, gather_candidates, known_codec_names, negotiated_codecs, next_state, CodecSet,
    EndpointConfig, Role, SignalingOp, SignalingState, SimEndpoint,
};
pub use link::{DirectLink, LinkError, SignalMessage, SignalingLink};
pub use network::{BitrateSegment, NetworkModel, StatsGenerator, PACKET_BYTES};
pub use pairing::{pair_priority, select_pair};
pub use scenario::{
    run_scenario, run_scenario_with, Action, ClockMode, NetworkUpdate, Scenario, ScenarioRun, Step, StepFailed,
};

use crate::category::CategoryId;
use crate::controls::Subscription;
use crate::engine::{DataChannelInit, DispatchOutcome, Engine, InterceptContext, Payload, WireMessage};
use crate::ice::{parse_candidate, serialize_candidate, IceCandidate};
use crate::media::{DeviceInfo, MediaConstraints};
use crate::sdp::{SdpType, SessionDescription};
use crate::stats::{IngestOutcome, StatsStore};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("endpoint `{0}` already exists")]
    DuplicateEndpoint(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("`{op:?}` not allowed for `{endpoint}` in state {state:?}")]
    WrongState {
        endpoint: String,
        state: SignalingState,
        op: SignalingOp,
    },
    #[error("`{0}` has no call in progress")]
    NoConnection(String),
    #[error("`{0}` is already in a call")]
    Busy(String),
    #[error("no viable candidate pair between `{0}` and `{1}`")]
    NoViablePair(String, String),
    #[error("data channel `{0}` was vetoed")]
    ChannelVetoed(String),
    #[error("data channel `{0}` is not open")]
    NotOpen(String),
    #[error("no data channel `{label}` on `{endpoint}`")]
    UnknownChannel { endpoint: String, label: String },
    #[error("malformed signaling message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConnection {
    pub caller: String,
    pub callee: String,
    pub offer: Option<SessionDescription>,
    pub answer: Option<SessionDescription>,
    pub negotiated: BTreeMap<String, String>,
    /// Candidates each side signaled, after Network filtering.
    pub signaled: BTreeMap<String, Vec<IceCandidate>>,
    /// The caller's view: (caller candidate, callee candidate).
    pub selected_pair: Option<(IceCandidate, IceCandidate)>,
    pub active: bool,
    pub model: NetworkModel,
    #[serde(skip)]
    generator: StatsGenerator,
}

impl SimConnection {
    pub fn involves(&self, endpoint: &str) -> bool {
        self.caller == endpoint || self.callee == endpoint
    }

    pub fn peer_of(&self, endpoint: &str) -> &str {
        if self.caller == endpoint {
            &self.callee
        } else {
            &self.caller
        }
    }

    fn answered(&self) -> bool {
        self.answer.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelState {
    Connecting,
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataChannelSim {
    pub label: String,
    pub state: ChannelState,
    pub sent: Vec<WireMessage>,
    pub received: Vec<WireMessage>,
}

impl DataChannelSim {
    fn new(label: &str, open: bool) -> Self {
        DataChannelSim {
            label: label.to_string(),
            state: if open { ChannelState::Open } else { ChannelState::Connecting },
            sent: Vec::new(),
            received: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Delivered(WireMessage),
    /// Answered or dropped before reaching the remote application.
    Suppressed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEvent {
    pub seq: u64,
    pub t_ms: u64,
    pub event: String,
    pub detail: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Transcript {
    pub events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn push(&mut self, t_ms: u64, event: &str, detail: Value) {
        self.events.push(TranscriptEvent {
            seq: self.events.len() as u64,
            t_ms,
            event: event.to_string(),
            detail,
        });
    }

    /// One JSON object per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("transcript serializes"));
            out.push('\n');
        }
        out
    }

    pub fn of_kind<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a TranscriptEvent> {
        self.events.iter().filter(move |e| e.event == event)
    }
}

fn mix_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id, folded with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h % 9_000_000_000_000_000 + 1_000_000_000_000_000
}

pub struct Harness {
    engine: Arc<Engine>,
    stats: Arc<StatsStore>,
    link: Box<dyn SignalingLink>,
    endpoints: BTreeMap<String, SimEndpoint>,
    connections: Vec<SimConnection>,
    channels: BTreeMap<(String, String), DataChannelSim>,
    transcript: Transcript,
    controls_sub: Option<Subscription>,
}

impl Harness {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self::with_link(engine, Box::new(DirectLink))
    }

    pub fn with_link(engine: Arc<Engine>, link: Box<dyn SignalingLink>) -> Self {
        let controls_sub = engine.controls().subscribe("*").ok();
        Harness {
            engine,
            stats: Arc::new(StatsStore::new()),
            link,
            endpoints: BTreeMap::new(),
            connections: Vec::new(),
            channels: BTreeMap::new(),
            transcript: Transcript::default(),
            controls_sub,
        }
    }

    pub fn with_stats_store(mut self, stats: Arc<StatsStore>) -> Self {
        self.stats = stats;
        self
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn stats_store(&self) -> &Arc<StatsStore> {
        &self.stats
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    pub fn endpoint(&self, id: &str) -> Option<&SimEndpoint> {
        self.endpoints.get(id)
    }

    pub fn connections(&self) -> &[SimConnection] {
        &self.connections
    }

    /// The most recent call involving `endpoint`.
    pub fn connection(&self, endpoint: &str) -> Option<&SimConnection> {
        self.connections.iter().rev().find(|c| c.involves(endpoint))
    }

    pub fn channel(&self, endpoint: &str, label: &str) -> Option<&DataChannelSim> {
        self.channels.get(&(endpoint.to_string(), label.to_string()))
    }

    fn now(&self) -> u64 {
        self.engine.clock().now_ms()
    }

    pub fn record(&mut self, event: &str, detail: Value) {
        let t = self.now();
        self.transcript.push(t, event, detail);
    }

    /// Moves pending control-bus events into the transcript.
    pub fn flush_controls(&mut self) {
        let events = match &self.controls_sub {
            Some(sub) => sub.drain(),
            None => return,
        };
        for e in events {
            let detail = serde_json::to_value(&e).unwrap_or_default();
            self.record("control", detail);
        }
    }

    fn dispatch(&mut self, category: CategoryId, session: &str, ctx: InterceptContext, payload: Payload) -> DispatchOutcome {
        let mut ctx = ctx;
        ctx.session_id = session.to_string();
        let out = self.engine.dispatch(category, &mut ctx, payload);
        let mut detail = json!({
            "category": category,
            "context": ctx.context,
            "session": session,
            "outcome": out.label(),
        });
        if let Some(err) = out.failure() {
            detail["error"] = json!(err.to_string());
        }
        self.record("dispatch", detail);
        out
    }

    fn endpoint_mut(&mut self, id: &str) -> Result<&mut SimEndpoint, HarnessError> {
        self.endpoints
            .get_mut(id)
            .ok_or_else(|| HarnessError::UnknownEndpoint(id.to_string()))
    }

    fn transition(&mut self, id: &str, op: SignalingOp) -> Result<(), HarnessError> {
        let ep = self.endpoint_mut(id)?;
        match next_state(ep.signaling_state, op) {
            Some(s) => {
                ep.signaling_state = s;
                Ok(())
            }
            None => Err(HarnessError::WrongState {
                endpoint: id.to_string(),
                state: ep.signaling_state,
                op,
            }),
        }
    }

    fn check_transition(&self, id: &str, op: SignalingOp) -> Result<(), HarnessError> {
        let ep = self
            .endpoints
            .get(id)
            .ok_or_else(|| HarnessError::UnknownEndpoint(id.to_string()))?;
        next_state(ep.signaling_state, op).map(|_| ()).ok_or(HarnessError::WrongState {
            endpoint: id.to_string(),
            state: ep.signaling_state,
            op,
        })
    }

    /// Creates an endpoint. Its peer configuration passes through the
    /// Connect category before candidates are gathered.
    pub fn add_endpoint(&mut self, config: EndpointConfig) -> Result<&SimEndpoint, HarnessError> {
        config.validate().map_err(HarnessError::InvalidConfig)?;
        if self.endpoints.contains_key(&config.id) {
            return Err(HarnessError::DuplicateEndpoint(config.id));
        }
        let out = self.dispatch(
            CategoryId::Connect,
            &config.id,
            InterceptContext::method("", "RTCPeerConnection"),
            Payload::PeerConfig(config.peer_config.clone()),
        );
        let peer_config = match out.into_payload() {
            Payload::PeerConfig(p) => p,
            _ => config.peer_config.clone(),
        };
        peer_config
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        let index = self.endpoints.len();
        let local_candidates = gather_candidates(&config, index, &peer_config);
        self.record(
            "endpoint",
            json!({
                "id": config.id,
                "peer_config": peer_config,
                "candidates": local_candidates.iter().map(serialize_candidate).collect::<Vec<_>>(),
            }),
        );
        let ep = SimEndpoint {
            id: config.id.clone(),
            index,
            role: None,
            codecs: config.codecs,
            data_channels: config.data_channels,
            local_candidates,
            signaling_state: SignalingState::Stable,
            peer_config,
            encoding: Default::default(),
            network: config.network,
            transport: config.transport,
            last_constraints: None,
            offers_created: 0,
        };
        let id = ep.id.clone();
        self.endpoints.insert(id.clone(), ep);
        Ok(&self.endpoints[&id])
    }

    fn send(&mut self, from: &str, to: &str, msg: SignalMessage) -> Result<Option<SignalMessage>, HarnessError> {
        let kind = msg.kind();
        let delivered = self.link.deliver(from, to, msg)?;
        self.record(
            "signal",
            json!({
                "from": from,
                "to": to,
                "type": kind,
                "delivered": delivered.as_ref().map(|m| serde_json::to_value(m).unwrap_or_default()),
            }),
        );
        Ok(delivered)
    }

    /// `from` creates an offer (through the Session category) and signals
    /// it to `to`.
    pub fn generate_offer(&mut self, from: &str, to: &str) -> Result<SessionDescription, HarnessError> {
        if !self.endpoints.contains_key(to) {
            return Err(HarnessError::UnknownEndpoint(to.to_string()));
        }
        for id in [from, to] {
            if self.connections.iter().any(|c| c.involves(id) && c.active) {
                return Err(HarnessError::Busy(id.to_string()));
            }
        }
        self.check_transition(from, SignalingOp::CreateOffer)?;
        self.check_transition(to, SignalingOp::ReceiveOffer)?;
        let seed = self.engine.seed();
        let ep = self.endpoint_mut(from)?;
        ep.offers_created += 1;
        let offer = build_offer(&ep.codecs, ep.data_channels, mix_seed(seed, from), ep.offers_created);
        let out = self.dispatch(
            CategoryId::Session,
            from,
            InterceptContext::method("", "createOffer"),
            Payload::Session(offer.clone()),
        );
        let offer = match out.into_payload() {
            Payload::Session(sd) => sd,
            _ => offer,
        };
        self.transition(from, SignalingOp::CreateOffer)?;
        self.endpoint_mut(from)?.role = Some(Role::Caller);
        self.connections.retain(|c| !(c.involves(from) || c.involves(to)) || c.active);
        let model = self.endpoints[from].network.clone();
        self.connections.push(SimConnection {
            caller: from.to_string(),
            callee: to.to_string(),
            offer: None,
            answer: None,
            negotiated: BTreeMap::new(),
            signaled: BTreeMap::new(),
            selected_pair: None,
            active: false,
            model,
            generator: StatsGenerator::default(),
        });
        let sent = SignalMessage::Offer {
            sdp: offer.to_sdp_string(),
        };
        if let Some(SignalMessage::Offer { sdp }) = self.send(from, to, sent)? {
            let received = SessionDescription::parse(&sdp, SdpType::Offer)
                .map_err(|e| HarnessError::Malformed(e.to_string()))?;
            self.transition(to, SignalingOp::ReceiveOffer)?;
            self.endpoint_mut(to)?.role = Some(Role::Callee);
            self.connections.last_mut().unwrap().offer = Some(received);
        }
        Ok(offer)
    }

    fn pending_index(&self, endpoint: &str) -> Result<usize, HarnessError> {
        self.connections
            .iter()
            .rposition(|c| c.involves(endpoint))
            .ok_or_else(|| HarnessError::NoConnection(endpoint.to_string()))
    }

    /// The callee answers the offer it holds; the caller applies the
    /// answer it receives.
    pub fn generate_answer(&mut self, callee: &str) -> Result<SessionDescription, HarnessError> {
        let idx = self.pending_index(callee)?;
        self.check_transition(callee, SignalingOp::CreateAnswer)?;
        let conn = &self.connections[idx];
        let offer = conn.offer.clone().ok_or_else(|| HarnessError::NoConnection(callee.to_string()))?;
        let caller = conn.caller.clone();
        let seed = self.engine.seed();
        let ep = &self.endpoints[callee];
        let answer = build_answer(&offer, &ep.codecs, ep.data_channels, mix_seed(seed, callee))
            .map_err(|e| HarnessError::Malformed(e.to_string()))?;
        let out = self.dispatch(
            CategoryId::Session,
            callee,
            InterceptContext::method("", "createAnswer"),
            Payload::Session(answer.clone()),
        );
        let answer = match out.into_payload() {
            Payload::Session(sd) => sd,
            _ => answer,
        };
        self.transition(callee, SignalingOp::CreateAnswer)?;
        let sent = SignalMessage::Answer {
            sdp: answer.to_sdp_string(),
        };
        if let Some(SignalMessage::Answer { sdp }) = self.send(callee, &caller, sent)? {
            self.apply_answer(&caller, &sdp)?;
        }
        Ok(answer)
    }

    fn apply_answer(&mut self, caller: &str, sdp: &str) -> Result<(), HarnessError> {
        let answer = SessionDescription::parse(sdp, SdpType::Answer).map_err(|e| HarnessError::Malformed(e.to_string()))?;
        self.transition(caller, SignalingOp::ApplyAnswer)?;
        let idx = self.pending_index(caller)?;
        let conn = &mut self.connections[idx];
        conn.negotiated = negotiated_codecs(&answer);
        conn.answer = Some(answer);
        let negotiated = conn.negotiated.clone();
        self.record("negotiated", json!({ "caller": caller, "codecs": negotiated }));
        self.maybe_connect(idx)
    }

    /// Sends each local candidate through the Network category; survivors
    /// are signaled to the peer. The local list itself is left whole.
    pub fn signal_candidates(&mut self, endpoint: &str) -> Result<Vec<IceCandidate>, HarnessError> {
        let idx = self.pending_index(endpoint)?;
        let peer = self.connections[idx].peer_of(endpoint).to_string();
        let is_caller = self.connections[idx].caller == endpoint;
        let started = if is_caller {
            true
        } else {
            self.connections[idx].offer.is_some()
        };
        if !started {
            return Err(HarnessError::NoConnection(endpoint.to_string()));
        }
        let local = self.endpoints[endpoint].local_candidates.clone();
        let mut signaled = Vec::new();
        for c in local {
            let out = self.dispatch(
                CategoryId::Network,
                endpoint,
                InterceptContext::event("", "icecandidate"),
                Payload::Candidates(vec![c.clone()]),
            );
            let Payload::Candidates(kept) = out.into_payload() else {
                continue;
            };
            for k in kept {
                let msg = SignalMessage::Candidate {
                    candidate: serialize_candidate(&k),
                };
                if let Some(SignalMessage::Candidate { candidate }) = self.send(endpoint, &peer, msg)? {
                    let parsed = parse_candidate(&candidate).map_err(|e| HarnessError::Malformed(e.to_string()))?;
                    signaled.push(parsed);
                }
            }
        }
        self.connections[idx]
            .signaled
            .insert(endpoint.to_string(), signaled.clone());
        self.maybe_connect(idx)?;
        Ok(signaled)
    }

    fn maybe_connect(&mut self, idx: usize) -> Result<(), HarnessError> {
        let conn = &self.connections[idx];
        if conn.active
            || !conn.answered()
            || !conn.signaled.contains_key(&conn.caller)
            || !conn.signaled.contains_key(&conn.callee)
        {
            return Ok(());
        }
        let (caller, callee) = (conn.caller.clone(), conn.callee.clone());
        let local = &self.endpoints[&caller].local_candidates;
        let Some(pair) = select_pair(local, &conn.signaled[&callee], true) else {
            self.record("connect_failed", json!({ "caller": caller, "callee": callee }));
            return Err(HarnessError::NoViablePair(caller, callee));
        };
        let now = self.now();
        let conn = &mut self.connections[idx];
        conn.selected_pair = Some(pair.clone());
        conn.active = true;
        conn.generator = StatsGenerator::starting_at(now);
        for ((ep, _), ch) in self.channels.iter_mut() {
            if (ep == &caller || ep == &callee) && ch.state == ChannelState::Connecting {
                ch.state = ChannelState::Open;
            }
        }
        self.record(
            "connected",
            json!({
                "caller": caller,
                "callee": callee,
                "local": serialize_candidate(&pair.0),
                "remote": serialize_candidate(&pair.1),
            }),
        );
        // channels created before the call reach the peer now
        let pending: Vec<(String, String, String)> = self
            .channels
            .keys()
            .filter(|(ep, _)| *ep == caller || *ep == callee)
            .map(|(ep, label)| {
                let peer = if *ep == caller { callee.clone() } else { caller.clone() };
                (ep.clone(), peer, label.clone())
            })
            .filter(|(_, peer, label)| !self.channels.contains_key(&(peer.clone(), label.clone())))
            .collect();
        for (owner, peer, label) in pending {
            self.announce_channel(&owner, &peer, &label, true);
        }
        Ok(())
    }

    /// Delivers the `datachannel` event to `peer`; a veto closes the
    /// owner's side.
    fn announce_channel(&mut self, owner: &str, peer: &str, label: &str, open: bool) -> bool {
        let init = DataChannelInit {
            label: label.to_string(),
            ordered: true,
        };
        let out = self.dispatch(
            CategoryId::Data,
            peer,
            InterceptContext::event("", "datachannel"),
            Payload::DataChannel(init),
        );
        if out.is_short_circuit() {
            if let Some(ch) = self.channels.get_mut(&(owner.to_string(), label.to_string())) {
                ch.state = ChannelState::Closed;
            }
            self.record("datachannel", json!({ "endpoint": peer, "label": label, "vetoed": true }));
            return false;
        }
        self.channels
            .insert((peer.to_string(), label.to_string()), DataChannelSim::new(label, open));
        true
    }

    /// Offer, answer and both candidate lists in one go.
    pub fn call(&mut self, from: &str, to: &str) -> Result<&SimConnection, HarnessError> {
        self.generate_offer(from, to)?;
        self.generate_answer(to)?;
        self.signal_candidates(from)?;
        self.signal_candidates(to)?;
        let idx = self.pending_index(from)?;
        Ok(&self.connections[idx])
    }

    pub fn create_datachannel(&mut self, endpoint: &str, label: &str) -> Result<(), HarnessError> {
        if !self.endpoints.contains_key(endpoint) {
            return Err(HarnessError::UnknownEndpoint(endpoint.to_string()));
        }
        let init = DataChannelInit {
            label: label.to_string(),
            ordered: true,
        };
        let out = self.dispatch(
            CategoryId::Data,
            endpoint,
            InterceptContext::method("", "createDataChannel"),
            Payload::DataChannel(init),
        );
        if out.is_short_circuit() {
            self.record("datachannel", json!({ "endpoint": endpoint, "label": label, "vetoed": true }));
            return Err(HarnessError::ChannelVetoed(label.to_string()));
        }
        let conn = self.connection(endpoint).cloned();
        let open = conn.as_ref().is_some_and(|c| c.active);
        self.channels
            .insert((endpoint.to_string(), label.to_string()), DataChannelSim::new(label, open));
        if let Some(conn) = conn.filter(|c| c.active) {
            let peer = conn.peer_of(endpoint).to_string();
            if !self.announce_channel(endpoint, &peer, label, open) {
                return Err(HarnessError::ChannelVetoed(label.to_string()));
            }
        }
        self.record("datachannel", json!({ "endpoint": endpoint, "label": label, "open": open }));
        Ok(())
    }

    pub fn send_data(&mut self, endpoint: &str, label: &str, message: WireMessage) -> Result<Delivery, HarnessError> {
        let key = (endpoint.to_string(), label.to_string());
        let state = self
            .channels
            .get(&key)
            .map(|c| c.state)
            .ok_or_else(|| HarnessError::UnknownChannel {
                endpoint: endpoint.to_string(),
                label: label.to_string(),
            })?;
        if state != ChannelState::Open {
            return Err(HarnessError::NotOpen(label.to_string()));
        }
        let peer = self
            .connection(endpoint)
            .map(|c| c.peer_of(endpoint).to_string())
            .ok_or_else(|| HarnessError::NoConnection(endpoint.to_string()))?;
        let out = self.dispatch(
            CategoryId::Data,
            endpoint,
            InterceptContext::method("", "send"),
            Payload::Message(message.clone()),
        );
        if out.is_short_circuit() {
            return Ok(Delivery::Suppressed);
        }
        let outgoing = match out.into_payload() {
            Payload::Message(m) => m,
            _ => message,
        };
        self.channels.get_mut(&key).unwrap().sent.push(outgoing.clone());
        let msg = SignalMessage::Data {
            label: label.to_string(),
            message: outgoing,
        };
        let Some(SignalMessage::Data { message, .. }) = self.send(endpoint, &peer, msg)? else {
            return Ok(Delivery::Suppressed);
        };
        let out = self.dispatch(
            CategoryId::Data,
            &peer,
            InterceptContext::event("", "message"),
            Payload::Message(message.clone()),
        );
        if out.is_short_circuit() {
            return Ok(Delivery::Suppressed);
        }
        let incoming = match out.into_payload() {
            Payload::Message(m) => m,
            _ => message,
        };
        match self.channels.get_mut(&(peer, label.to_string())) {
            Some(ch) if ch.state == ChannelState::Open => {
                ch.received.push(incoming.clone());
                Ok(Delivery::Delivered(incoming))
            }
            _ => Ok(Delivery::Suppressed),
        }
    }

    /// Constraints as the Media category leaves them.
    pub fn get_user_media(&mut self, endpoint: &str, constraints: MediaConstraints) -> Result<MediaConstraints, HarnessError> {
        constraints
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        if !self.endpoints.contains_key(endpoint) {
            return Err(HarnessError::UnknownEndpoint(endpoint.to_string()));
        }
        let out = self.dispatch(
            CategoryId::Media,
            endpoint,
            InterceptContext::method("", "getUserMedia"),
            Payload::Constraints(constraints.clone()),
        );
        let result = match out.into_payload() {
            Payload::Constraints(c) => c,
            _ => constraints,
        };
        self.endpoint_mut(endpoint)?.last_constraints = Some(result.clone());
        self.record("constraints", json!({ "endpoint": endpoint, "constraints": result }));
        Ok(result)
    }

    pub fn enumerate_devices(&mut self, endpoint: &str, devices: Vec<DeviceInfo>) -> Result<Vec<DeviceInfo>, HarnessError> {
        if !self.endpoints.contains_key(endpoint) {
            return Err(HarnessError::UnknownEndpoint(endpoint.to_string()));
        }
        let out = self.dispatch(
            CategoryId::Devices,
            endpoint,
            InterceptContext::method("", "enumerateDevices"),
            Payload::Devices(devices.clone()),
        );
        let result = match out.into_payload() {
            Payload::Devices(d) => d,
            _ => devices,
        };
        self.record("devices", json!({ "endpoint": endpoint, "devices": result }));
        Ok(result)
    }

    pub fn set_network(&mut self, endpoint: &str, update: &NetworkUpdate) -> Result<(), HarnessError> {
        let now = self.now();
        let idx = self.pending_index(endpoint)?;
        let conn = &mut self.connections[idx];
        if conn.active {
            // counters so far accrue under the old model
            let session = conn.caller.clone();
            let model = conn.model.clone();
            conn.generator.report(&session, &model, now);
        }
        update.apply(&mut conn.model, now);
        conn.model.validate().map_err(HarnessError::InvalidConfig)?;
        let model = conn.model.clone();
        self.record("network", json!({ "endpoint": endpoint, "model": model }));
        Ok(())
    }

    /// Counters for the active call of `endpoint` at `at_ms`.
    pub fn synthesize_stats(&mut self, endpoint: &str, at_ms: u64) -> Result<crate::stats::StatsReport, HarnessError> {
        let idx = self.pending_index(endpoint)?;
        let conn = &mut self.connections[idx];
        if !conn.active {
            return Err(HarnessError::NoConnection(endpoint.to_string()));
        }
        let session = conn.caller.clone();
        Ok(conn.generator.report(&session, &conn.model, at_ms))
    }

    /// Synthesizes a report for every active call, passes it through the
    /// Stats category and ingests it.
    pub fn poll_stats(&mut self) -> usize {
        let now = self.now();
        let callers: Vec<String> = self
            .connections
            .iter()
            .filter(|c| c.active)
            .map(|c| c.caller.clone())
            .collect();
        for caller in &callers {
            let Ok(report) = self.synthesize_stats(caller, now) else {
                continue;
            };
            let out = self.dispatch(
                CategoryId::Stats,
                caller,
                InterceptContext::method("", "getStats"),
                Payload::Stats(report.clone()),
            );
            let report = match out.into_payload() {
                Payload::Stats(r) => r,
                _ => report,
            };
            let outcome = self.stats.ingest(report);
            let detail = match &outcome {
                IngestOutcome::Accepted { metrics } => json!({ "session": caller, "metrics": metrics }),
                IngestOutcome::Rejected { reason } => json!({ "session": caller, "rejected": reason.to_string() }),
            };
            self.record("stats", detail);
        }
        callers.len()
    }

    pub fn hangup(&mut self, endpoint: &str) -> Result<(), HarnessError> {
        let idx = self.pending_index(endpoint)?;
        let peer = self.connections[idx].peer_of(endpoint).to_string();
        self.send(endpoint, &peer, SignalMessage::Bye)?;
        self.connections[idx].active = false;
        for id in [endpoint, peer.as_str()] {
            self.transition(id, SignalingOp::Close).ok();
        }
        for ((ep, _), ch) in self.channels.iter_mut() {
            if ep == endpoint || *ep == peer {
                ch.state = ChannelState::Closed;
            }
        }
        self.record("hangup", json!({ "by": endpoint, "peer": peer }));
        Ok(())
    }

    pub fn close_link(&mut self) {
        self.link.close();
    }
}
