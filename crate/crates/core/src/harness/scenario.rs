use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{EndpointConfig, Harness, HarnessError, NetworkModel, SignalingLink};
use crate::category::CategoryId;
use crate::clock::{Clock, ElapsedClock, VirtualClock};
use crate::controls::ControlsBus;
use crate::cpu::{publish_sample, CpuSample};
use crate::engine::{Catalog, Engine, EngineSettings, TransformSpec, WireMessage};
use crate::media::{DeviceInfo, MediaConstraints};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

/// Partial change to a call's network model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkUpdate {
    pub loss_fraction: Option<f64>,
    pub rtt_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub bitrate_bps: Option<f64>,
}

impl NetworkUpdate {
    pub fn apply(&self, model: &mut NetworkModel, now_ms: u64) {
        if let Some(v) = self.loss_fraction {
            model.loss_fraction = v;
        }
        if let Some(v) = self.rtt_ms {
            model.rtt_ms = v;
        }
        if let Some(v) = self.jitter_ms {
            model.jitter_ms = v;
        }
        if let Some(v) = self.bitrate_bps {
            model.set_bitrate_from(now_ms, v);
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "params", rename_all = "snake_case")]
pub enum Action {
    /// Offer from `from` to `to`; with `complete` the answer and both
    /// candidate lists follow immediately.
    Call {
        from: String,
        to: String,
        #[serde(default)]
        complete: bool,
    },
    Answer { endpoint: String },
    AddCandidate { endpoint: String },
    CreateDatachannel { endpoint: String, label: String },
    SendData { endpoint: String, label: String, text: String },
    SetNetwork {
        endpoint: String,
        #[serde(flatten)]
        update: NetworkUpdate,
    },
    /// Sets a control when `value` is given, otherwise fires a trigger.
    TriggerControl {
        name: String,
        #[serde(default)]
        value: Option<Scalar>,
    },
    CpuSample {
        load_percent: f64,
        #[serde(default = "one")]
        cores: usize,
    },
    GetUserMedia { endpoint: String, constraints: Box<MediaConstraints> },
    EnumerateDevices { endpoint: String, devices: Vec<DeviceInfo> },
    Install { spec: TransformSpec },
    Uninstall { category: CategoryId },
    Hangup { endpoint: String },
    Wait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default)]
    pub settings: EngineSettings,
    #[serde(default)]
    pub endpoints: Vec<EndpointConfig>,
    #[serde(default)]
    pub transforms: Vec<TransformSpec>,
    #[serde(default)]
    pub controls: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| e.to_string())?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.steps.windows(2).any(|w| w[1].at_ms < w[0].at_ms) {
            return Err("step times must be non-decreasing".into());
        }
        self.settings.validate().map_err(|e| e.to_string())?;
        for ep in &self.endpoints {
            ep.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("step {index} failed: {cause}")]
pub struct StepFailed {
    pub index: usize,
    pub cause: String,
}

pub struct ScenarioRun {
    pub harness: Harness,
    pub error: Option<StepFailed>,
}

impl ScenarioRun {
    pub fn transcript_ndjson(&self) -> String {
        self.harness.transcript().to_ndjson()
    }
}

/// Runs `scenario` on a fresh engine with direct signaling.
pub fn run_scenario(scenario: &Scenario) -> ScenarioRun {
    run_scenario_with(scenario, Box::new(super::DirectLink))
}

fn make_engine(scenario: &Scenario) -> (Arc<Engine>, Option<VirtualClock>) {
    let (clock, virt): (Arc<dyn Clock>, _) = match scenario.clock {
        ClockMode::Virtual => {
            let v = VirtualClock::new(0);
            (Arc::new(v.clone()), Some(v))
        }
        ClockMode::Wall => (Arc::new(ElapsedClock::start()), None),
    };
    let controls = Arc::new(ControlsBus::new(clock.clone()));
    let engine = Engine::new(Catalog::with_builtins(), scenario.settings.clone(), controls, clock);
    (Arc::new(engine), virt)
}

pub fn run_scenario_with(scenario: &Scenario, link: Box<dyn SignalingLink>) -> ScenarioRun {
    let (engine, virt) = make_engine(scenario);
    let mut h = Harness::with_link(engine.clone(), link);
    let fail = |h: Harness, index: usize, cause: String| {
        let mut h = h;
        h.record("error", json!({ "step": index, "cause": cause }));
        h.close_link();
        ScenarioRun {
            harness: h,
            error: Some(StepFailed { index, cause }),
        }
    };
    h.record("scenario", json!({ "name": scenario.name, "seed": scenario.settings.seed }));
    if let Err(e) = scenario.validate() {
        return fail(h, 0, e);
    }
    for (name, value) in &scenario.controls {
        if let Err(e) = engine.controls().set(name, value.clone()) {
            return fail(h, 0, e.to_string());
        }
    }
    for spec in &scenario.transforms {
        if let Err(e) = engine.install_transform(spec.category, spec.clone()) {
            return fail(h, 0, e.to_string());
        }
    }
    for ep in &scenario.endpoints {
        if let Err(e) = h.add_endpoint(ep.clone()) {
            return fail(h, 0, e.to_string());
        }
    }
    h.flush_controls();

    let mut next_poll = engine.stats_interval_ms();
    for (index, step) in scenario.steps.iter().enumerate() {
        while next_poll <= step.at_ms {
            advance_to(&virt, &engine, next_poll);
            h.poll_stats();
            h.flush_controls();
            next_poll += engine.stats_interval_ms();
        }
        advance_to(&virt, &engine, step.at_ms);
        h.record("step", json!({ "index": index, "action": &step.action }));
        let result = execute(&mut h, &step.action);
        h.flush_controls();
        if let Err(e) = result {
            return fail(h, index, e.to_string());
        }
    }
    h.close_link();
    ScenarioRun { harness: h, error: None }
}

fn advance_to(virt: &Option<VirtualClock>, engine: &Engine, t_ms: u64) {
    match virt {
        Some(v) => v.set(t_ms.max(v.now_ms())),
        None => {
            let now = engine.clock().now_ms();
            if t_ms > now {
                std::thread::sleep(Duration::from_millis(t_ms - now));
            }
        }
    }
}

fn execute(h: &mut Harness, action: &Action) -> Result<(), HarnessError> {
    match action {
        Action::Call { from, to, complete } => {
            if *complete {
                h.call(from, to)?;
            } else {
                h.generate_offer(from, to)?;
            }
        }
        Action::Answer { endpoint } => {
            h.generate_answer(endpoint)?;
        }
        Action::AddCandidate { endpoint } => {
            h.signal_candidates(endpoint)?;
        }
        Action::CreateDatachannel { endpoint, label } => h.create_datachannel(endpoint, label)?,
        Action::SendData { endpoint, label, text } => {
            let result = h.send_data(endpoint, label, WireMessage::Text(text.clone()))?;
            let detail = match result {
                super::Delivery::Delivered(m) => json!({ "endpoint": endpoint, "label": label, "delivered": m }),
                super::Delivery::Suppressed => json!({ "endpoint": endpoint, "label": label, "suppressed": true }),
            };
            h.record("data", detail);
        }
        Action::SetNetwork { endpoint, update } => h.set_network(endpoint, update)?,
        Action::TriggerControl { name, value } => {
            let controls = h.engine().controls().clone();
            match value {
                Some(v) => {
                    controls
                        .set(name, v.clone())
                        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
                }
                None => {
                    controls.trigger(name, true);
                }
            }
        }
        Action::CpuSample { load_percent, cores } => {
            let engine = h.engine().clone();
            let sample = CpuSample::uniform(engine.clock().now_ms(), *load_percent, *cores);
            publish_sample(&engine, &sample);
        }
        Action::GetUserMedia { endpoint, constraints } => {
            h.get_user_media(endpoint, (**constraints).clone())?;
        }
        Action::EnumerateDevices { endpoint, devices } => {
            h.enumerate_devices(endpoint, devices.clone())?;
        }
        Action::Install { spec } => {
            h.engine()
                .install_transform(spec.category, spec.clone())
                .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        }
        Action::Uninstall { category } => {
            h.engine().uninstall_transform(*category);
        }
        Action::Hangup { endpoint } => h.hangup(endpoint)?,
        Action::Wait => {}
    }
    Ok(())
}
