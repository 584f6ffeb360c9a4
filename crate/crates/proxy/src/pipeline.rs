//! Per-message processing for one proxied session: Socket dispatch, then
//! the fault policy. Network I/O lives elsewhere.

use std::sync::Arc;

use rtcshim_core::engine::WireMessage;
use rtcshim_core::{CategoryId, DispatchOutcome, Engine, InterceptContext, Payload};

use crate::fault::{FaultEffect, FaultEffectKind, FaultPolicy, FaultRng};
use crate::record::{Direction, Disposition, SessionRegistry};

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Forward { message: WireMessage, delay_ms: u64 },
    Drop,
    /// Send this back to the side the message came from.
    Reply(WireMessage),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("connection to `{0}` refused by a Socket transform")]
pub struct Blocked(pub String);

pub struct SessionPipeline {
    engine: Arc<Engine>,
    registry: Arc<SessionRegistry>,
    policy: FaultPolicy,
    session_id: String,
    c2s: FaultRng,
    s2c: FaultRng,
    counts: [u64; 2],
}

impl SessionPipeline {
    pub fn new(engine: Arc<Engine>, registry: Arc<SessionRegistry>, policy: FaultPolicy, session_id: &str) -> Self {
        let seed = engine.seed();
        SessionPipeline {
            engine,
            registry,
            policy,
            session_id: session_id.to_string(),
            c2s: FaultRng::new(seed, session_id, Direction::C2s),
            s2c: FaultRng::new(seed, session_id, Direction::S2c),
            counts: [0, 0],
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn policy(&self) -> &FaultPolicy {
        &self.policy
    }

    fn effect(&self, direction: Option<Direction>, message: Option<u64>, kind: FaultEffectKind) {
        self.registry.effect(
            &self.session_id,
            FaultEffect {
                t_ms: self.registry.now_ms(),
                direction,
                message,
                kind,
            },
        );
    }

    /// Resolves the upstream URL at session start: Socket dispatch with the
    /// `WebSocket` context, then the policy's `url_rewrite`.
    pub fn open_url(&mut self, url: &str) -> Result<String, Blocked> {
        let mut ctx = InterceptContext::method(&self.session_id, "WebSocket");
        let out = self.engine.dispatch(CategoryId::Socket, &mut ctx, Payload::Url(url.to_string()));
        let mut target = match out {
            DispatchOutcome::ShortCircuit(_) => return Err(Blocked(url.to_string())),
            other => match other.into_payload() {
                Payload::Url(u) => u,
                _ => url.to_string(),
            },
        };
        if let Some(to) = self.policy.rewrite_url(&target) {
            self.effect(None, None, FaultEffectKind::UrlRewrite { from: target.clone(), to: to.clone() });
            target = to;
        }
        self.registry.set_upstream(&self.session_id, &target);
        Ok(target)
    }

    pub fn process(&mut self, direction: Direction, message: WireMessage) -> Verdict {
        let idx = direction as usize;
        self.counts[idx] += 1;
        let n = self.counts[idx];
        let mut ctx = match direction {
            Direction::C2s => InterceptContext::method(&self.session_id, "send"),
            Direction::S2c => InterceptContext::event(&self.session_id, "message"),
        };
        let out = self
            .engine
            .dispatch(CategoryId::Socket, &mut ctx, Payload::Message(message.clone()));
        let (current, original) = match out {
            DispatchOutcome::ShortCircuit(Payload::Message(reply)) => {
                self.registry
                    .record(&self.session_id, direction, message, None, Disposition::AnsweredLocally, 0);
                self.registry.record(
                    &self.session_id,
                    direction.reversed(),
                    reply.clone(),
                    None,
                    Disposition::Synthesized,
                    0,
                );
                return Verdict::Reply(reply);
            }
            DispatchOutcome::ShortCircuit(_) => {
                self.registry
                    .record(&self.session_id, direction, message, None, Disposition::Dropped, 0);
                return Verdict::Drop;
            }
            DispatchOutcome::Modified(Payload::Message(m)) => (m, Some(message)),
            _ => (message, None),
        };

        if direction == Direction::C2s {
            if let Some(reply) = self.fake_reply(&current, n) {
                self.registry
                    .record(&self.session_id, direction, current, original, Disposition::AnsweredLocally, 0);
                self.registry.record(
                    &self.session_id,
                    Direction::S2c,
                    reply.clone(),
                    None,
                    Disposition::Synthesized,
                    0,
                );
                return Verdict::Reply(reply);
            }
        }

        let policy = &self.policy;
        let rng = match direction {
            Direction::C2s => &mut self.c2s,
            Direction::S2c => &mut self.s2c,
        };
        let dropped = policy.drop_prob > 0.0 && rng.roll(policy.drop_prob);
        let delay_ms = if dropped { 0 } else { rng.delay(policy.delay) };
        if dropped {
            self.effect(Some(direction), Some(n), FaultEffectKind::Drop);
            self.registry
                .record(&self.session_id, direction, current, original, Disposition::Dropped, 0);
            return Verdict::Drop;
        }
        if delay_ms > 0 {
            self.effect(Some(direction), Some(n), FaultEffectKind::Delay { ms: delay_ms });
        }
        self.registry.record(
            &self.session_id,
            direction,
            current.clone(),
            original,
            Disposition::Forwarded,
            delay_ms,
        );
        Verdict::Forward {
            message: current,
            delay_ms,
        }
    }

    fn fake_reply(&mut self, message: &WireMessage, n: u64) -> Option<WireMessage> {
        let text = message.as_text()?;
        let (i, rule) = self
            .policy
            .fake_responses
            .iter()
            .enumerate()
            .find(|(_, r)| r.body.is_some() && r.matches(text))?;
        let body = rule.body.clone()?;
        if rule.probability < 1.0 && !self.c2s.roll(rule.probability) {
            return None;
        }
        self.effect(Some(Direction::C2s), Some(n), FaultEffectKind::FakeResponse { rule: i });
        Some(WireMessage::Text(body))
    }

    /// Logs the scheduled close deadline.
    pub fn note_close_after(&self) {
        if let Some(after_ms) = self.policy.close_after_ms {
            self.effect(None, None, FaultEffectKind::Close { after_ms });
        }
    }
}
