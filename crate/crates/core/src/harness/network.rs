use serde::{Deserialize, Serialize};

use crate::stats::{StatsEntry, StatsReport};

/// Payload bytes per synthetic RTP packet.
pub const PACKET_BYTES: f64 = 1200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitrateSegment {
    pub from_ms: u64,
    pub bps: f64,
}

/// Path characteristics used to synthesize stats. The bitrate is
/// piecewise constant over scenario time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkModel {
    pub loss_fraction: f64,
    pub rtt_ms: f64,
    pub jitter_ms: f64,
    pub bitrate_profile: Vec<BitrateSegment>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            loss_fraction: 0.0,
            rtt_ms: 50.0,
            jitter_ms: 5.0,
            bitrate_profile: vec![BitrateSegment { from_ms: 0, bps: 1_000_000.0 }],
        }
    }
}

impl NetworkModel {
    pub fn constant(bps: f64, loss_fraction: f64, rtt_ms: f64, jitter_ms: f64) -> Self {
        NetworkModel {
            loss_fraction,
            rtt_ms,
            jitter_ms,
            bitrate_profile: vec![BitrateSegment { from_ms: 0, bps }],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loss_fraction) {
            return Err(format!("loss_fraction {} outside [0, 1]", self.loss_fraction));
        }
        if !(self.rtt_ms >= 0.0 && self.jitter_ms >= 0.0) {
            return Err("rtt_ms and jitter_ms must be non-negative".into());
        }
        if self.bitrate_profile.iter().any(|s| s.bps.is_nan() || s.bps < 0.0) {
            return Err("bitrates must be non-negative".into());
        }
        if self.bitrate_profile.windows(2).any(|w| w[1].from_ms < w[0].from_ms) {
            return Err("bitrate segments must be in time order".into());
        }
        Ok(())
    }

    pub fn bitrate_at(&self, t_ms: u64) -> f64 {
        self.bitrate_profile
            .iter()
            .rev()
            .find(|s| s.from_ms <= t_ms)
            .map_or(0.0, |s| s.bps)
    }

    /// From `t_ms` on, send at `bps`.
    pub fn set_bitrate_from(&mut self, t_ms: u64, bps: f64) {
        self.bitrate_profile.retain(|s| s.from_ms < t_ms);
        self.bitrate_profile.push(BitrateSegment { from_ms: t_ms, bps });
    }

    /// Bits sent over `(from, to]`.
    pub fn bits_between(&self, from_ms: u64, to_ms: u64) -> f64 {
        if to_ms <= from_ms {
            return 0.0;
        }
        let mut total = 0.0;
        for (i, seg) in self.bitrate_profile.iter().enumerate() {
            let end = self
                .bitrate_profile
                .get(i + 1)
                .map_or(u64::MAX, |n| n.from_ms);
            let a = seg.from_ms.max(from_ms);
            let b = end.min(to_ms);
            if b > a {
                total += seg.bps * (b - a) as f64 / 1000.0;
            }
        }
        total
    }
}

/// Cumulative counters for one connection, seen from the caller.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatsGenerator {
    pub last_ms: u64,
    pub bytes_sent: f64,
    pub packets_sent: f64,
    pub bytes_received: f64,
    pub packets_received: f64,
    pub packets_lost: f64,
}

impl StatsGenerator {
    pub fn starting_at(t_ms: u64) -> Self {
        StatsGenerator {
            last_ms: t_ms,
            ..Default::default()
        }
    }

    /// Advances counters to `at_ms` and emits a report. Both directions
    /// carry the model bitrate; the model loss applies to the inbound
    /// stream. Counters are reported rounded, so rounding error does not
    /// accumulate across reports.
    pub fn report(&mut self, session_id: &str, model: &NetworkModel, at_ms: u64) -> StatsReport {
        let bytes = model.bits_between(self.last_ms, at_ms) / 8.0;
        let packets = bytes / PACKET_BYTES;
        self.bytes_sent += bytes;
        self.packets_sent += packets;
        self.bytes_received += bytes * (1.0 - model.loss_fraction);
        self.packets_received += packets * (1.0 - model.loss_fraction);
        self.packets_lost += packets * model.loss_fraction;
        self.last_ms = self.last_ms.max(at_ms);
        let t = at_ms as f64;
        StatsReport::new(session_id, at_ms)
            .with_entry(
                StatsEntry::new("OT01", "outbound-rtp", t)
                    .with("bytes_sent", self.bytes_sent.round())
                    .with("packets_sent", self.packets_sent.round()),
            )
            .with_entry(
                StatsEntry::new("IT01", "inbound-rtp", t)
                    .with("bytes_received", self.bytes_received.round())
                    .with("packets_received", self.packets_received.round())
                    .with("packets_lost", self.packets_lost.round())
                    .with("jitter_s", model.jitter_ms / 1000.0),
            )
            .with_entry(
                StatsEntry::new("CP01", "candidate-pair", t)
                    .with("current_rtt_s", model.rtt_ms / 1000.0)
                    .with("available_outgoing_bitrate", model.bitrate_at(at_ms)),
            )
    }
}
