//! Harness signaling routed through the proxy pipeline, so Socket
//! transforms and fault policies apply to simulated calls.

use std::sync::Arc;

use rtcshim_core::engine::WireMessage;
use rtcshim_core::harness::{LinkError, SignalMessage, SignalingLink};
use rtcshim_core::Engine;

use crate::fault::FaultPolicy;
use crate::pipeline::{SessionPipeline, Verdict};
use crate::record::{Direction, SessionRegistry};

/// The first sender is treated as the client side. Delays are logged but
/// not waited on, since harness runs follow their own clock.
pub struct ProxiedLink {
    pipeline: SessionPipeline,
    client: Option<String>,
    replies: Vec<(String, SignalMessage)>,
}

impl ProxiedLink {
    pub fn new(engine: Arc<Engine>, registry: Arc<SessionRegistry>, policy: FaultPolicy) -> Self {
        let id = registry.open("link", "harness", "harness");
        ProxiedLink {
            pipeline: SessionPipeline::new(engine, registry, policy, &id),
            client: None,
            replies: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        self.pipeline.session_id()
    }

    /// Messages the proxy answered locally, keyed by the endpoint they were
    /// addressed back to.
    pub fn replies(&self) -> &[(String, SignalMessage)] {
        &self.replies
    }
}

impl SignalingLink for ProxiedLink {
    fn deliver(&mut self, from: &str, to: &str, msg: SignalMessage) -> Result<Option<SignalMessage>, LinkError> {
        let client = self.client.get_or_insert_with(|| from.to_string());
        let direction = if client == from { Direction::C2s } else { Direction::S2c };
        match self.pipeline.process(direction, WireMessage::Text(msg.to_text())) {
            Verdict::Forward { message, .. } => {
                let text = message
                    .as_text()
                    .ok_or_else(|| LinkError(format!("binary frame for {to} is not a signaling message")))?;
                SignalMessage::from_text(text)
                    .map(Some)
                    .map_err(|e| LinkError(format!("rewritten message for {to} no longer parses: {e}")))
            }
            Verdict::Drop => Ok(None),
            Verdict::Reply(reply) => {
                if let Some(m) = reply.as_text().and_then(|t| SignalMessage::from_text(t).ok()) {
                    self.replies.push((from.to_string(), m));
                }
                Ok(None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rtcshim_core::clock::VirtualClock;
    use rtcshim_core::harness::{EndpointConfig, Harness};
    use rtcshim_core::{CategoryId, TransformSpec};

    fn link(engine: &Arc<Engine>, policy: FaultPolicy) -> (Arc<SessionRegistry>, ProxiedLink) {
        let reg = Arc::new(SessionRegistry::new(Arc::new(VirtualClock::new(0)), 100));
        let l = ProxiedLink::new(engine.clone(), reg.clone(), policy);
        (reg, l)
    }

    #[test]
    fn harness_call_crosses_the_proxy() {
        let engine = Arc::new(Engine::default());
        let (reg, l) = link(&engine, FaultPolicy::default());
        let mut h = Harness::with_link(engine.clone(), Box::new(l));
        h.add_endpoint(EndpointConfig::new("alice")).unwrap();
        h.add_endpoint(EndpointConfig::new("bob")).unwrap();
        assert!(h.call("alice", "bob").unwrap().active);
        let s = reg.session("link-1").unwrap();
        assert_eq!(s.counters.msgs_c2s, 2);
        assert_eq!(s.counters.msgs_s2c, 2);
    }

    #[test]
    fn socket_rewrite_reaches_the_callee() {
        let engine = Arc::new(Engine::default());
        engine
            .install_transform(
                CategoryId::Socket,
                TransformSpec::new(CategoryId::Socket, "rewrite_message")
                    .param("find", "VP8")
                    .param("replace", "VP9")
                    .param("context", "send"),
            )
            .unwrap();
        let (_, l) = link(&engine, FaultPolicy::default());
        let mut h = Harness::with_link(engine.clone(), Box::new(l));
        h.add_endpoint(EndpointConfig::new("alice")).unwrap();
        let mut bob = EndpointConfig::new("bob");
        bob.codecs.video = vec!["VP9".into(), "VP8".into()];
        h.add_endpoint(bob).unwrap();
        let conn = h.call("alice", "bob").unwrap();
        assert_eq!(conn.negotiated["video"], "VP9");
    }

    #[test]
    fn dropped_offer_never_arrives() {
        let engine = Arc::new(Engine::default());
        let (_, l) = link(
            &engine,
            FaultPolicy {
                drop_prob: 1.0,
                ..Default::default()
            },
        );
        let mut h = Harness::with_link(engine, Box::new(l));
        h.add_endpoint(EndpointConfig::new("a")).unwrap();
        h.add_endpoint(EndpointConfig::new("b")).unwrap();
        h.generate_offer("a", "b").unwrap();
        assert!(h.generate_answer("b").is_err());
    }
}
