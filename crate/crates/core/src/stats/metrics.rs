use serde::{Deserialize, Serialize};

use super::{StatsEntry, StatsError, StatsReport};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    pub t_ms: u64,
    pub send_bitrate_bps: Option<f64>,
    pub recv_bitrate_bps: Option<f64>,
    pub packet_loss_rate: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub rtt_ms: Option<f64>,
    pub available_bitrate_bps: Option<f64>,
    /// Ids in the current report with no baseline in the previous one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_counterpart: Vec<String>,
    /// Ids whose counters went backwards (stream restart); their deltas
    /// count as zero for this window.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub restarted: Vec<String>,
}

/// Counter delta; `None` when the counter went backwards.
fn delta(prev: &StatsEntry, curr: &StatsEntry, field: &str) -> Option<f64> {
    let (a, b) = (prev.num(field)?, curr.num(field)?);
    (b >= a).then_some(b - a)
}

fn regressed(prev: &StatsEntry, curr: &StatsEntry) -> bool {
    super::COUNTERS.iter().any(|f| match (prev.num(f), curr.num(f)) {
        (Some(a), Some(b)) => b < a,
        _ => false,
    })
}

pub fn derive_metrics(prev: &StatsReport, curr: &StatsReport) -> Result<DerivedMetrics, StatsError> {
    if curr.taken_at_ms <= prev.taken_at_ms {
        return Err(StatsError::DuplicateTimestamp {
            previous: prev.taken_at_ms,
            got: curr.taken_at_ms,
        });
    }
    let dt_s = (curr.taken_at_ms - prev.taken_at_ms) as f64 / 1000.0;
    let mut out = DerivedMetrics {
        t_ms: curr.taken_at_ms,
        ..Default::default()
    };

    let mut sent_bytes: Option<f64> = None;
    let mut recv_bytes: Option<f64> = None;
    let mut lost: Option<f64> = None;
    let mut received: Option<f64> = None;

    for (id, entry) in &curr.entries {
        let Some(base) = prev.entries.get(id) else {
            if matches!(entry.entry_type.as_str(), "outbound-rtp" | "inbound-rtp") {
                out.missing_counterpart.push(id.clone());
            }
            continue;
        };
        let restarted = regressed(base, entry);
        if restarted {
            out.restarted.push(id.clone());
        }
        // a restarted stream contributes zero to this window
        let d = |field: &str| if restarted { Some(0.0) } else { delta(base, entry, field) };
        match entry.entry_type.as_str() {
            "outbound-rtp" => {
                if let Some(b) = d("bytes_sent") {
                    *sent_bytes.get_or_insert(0.0) += b;
                }
            }
            "inbound-rtp" => {
                if let Some(b) = d("bytes_received") {
                    *recv_bytes.get_or_insert(0.0) += b;
                }
                if let Some(l) = d("packets_lost") {
                    *lost.get_or_insert(0.0) += l;
                }
                if let Some(r) = d("packets_received") {
                    *received.get_or_insert(0.0) += r;
                }
            }
            _ => {}
        }
    }

    out.send_bitrate_bps = sent_bytes.map(|b| b * 8.0 / dt_s);
    out.recv_bitrate_bps = recv_bytes.map(|b| b * 8.0 / dt_s);
    out.packet_loss_rate = match (lost, received) {
        (Some(l), Some(r)) if l + r > 0.0 => Some(l / (l + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };

    let jitters: Vec<f64> = curr
        .entries_of("inbound-rtp")
        .filter_map(|e| e.num("jitter_s"))
        .collect();
    if !jitters.is_empty() {
        out.jitter_ms = Some(jitters.iter().sum::<f64>() / jitters.len() as f64 * 1000.0);
    }
    let pair = curr
        .entries_of("candidate-pair")
        .find(|e| e.num("current_rtt_s").is_some() || e.num("available_outgoing_bitrate").is_some());
    if let Some(pair) = pair {
        out.rtt_ms = pair.num("current_rtt_s").map(|s| s * 1000.0);
        out.available_bitrate_bps = pair.num("available_outgoing_bitrate");
    }
    Ok(out)
}

/// Simplified E-model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EModel {
    pub base_r: f64,
    pub fixed_delay_ms: f64,
    pub jitter_weight: f64,
    pub delay_slope: f64,
    pub delay_knee_ms: f64,
    pub delay_knee_slope: f64,
    pub loss_scale: f64,
    pub loss_sensitivity: f64,
}

impl Default for EModel {
    fn default() -> Self {
        EModel {
            base_r: 93.2,
            fixed_delay_ms: 10.0,
            jitter_weight: 2.0,
            delay_slope: 0.024,
            delay_knee_ms: 177.3,
            delay_knee_slope: 0.11,
            loss_scale: 30.0,
            loss_sensitivity: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub r_factor: f64,
    pub mos: f64,
}

pub fn compute_mos(loss: f64, rtt_ms: f64, jitter_ms: f64) -> Result<QualityScore, StatsError> {
    compute_mos_with(&EModel::default(), loss, rtt_ms, jitter_ms)
}

pub fn compute_mos_with(
    model: &EModel,
    loss: f64,
    rtt_ms: f64,
    jitter_ms: f64,
) -> Result<QualityScore, StatsError> {
    if !(0.0..=1.0).contains(&loss) {
        return Err(StatsError::InvalidInput(format!("loss {loss} outside [0, 1]")));
    }
    if !(rtt_ms.is_finite() && rtt_ms >= 0.0 && jitter_ms.is_finite() && jitter_ms >= 0.0) {
        return Err(StatsError::InvalidInput("delays must be finite and non-negative".into()));
    }
    let d = rtt_ms / 2.0 + model.jitter_weight * jitter_ms + model.fixed_delay_ms;
    let mut id = model.delay_slope * d;
    if d > model.delay_knee_ms {
        id += model.delay_knee_slope * (d - model.delay_knee_ms);
    }
    let ie = model.loss_scale * (1.0 + model.loss_sensitivity * loss).ln();
    let r = (model.base_r - id - ie).clamp(0.0, 100.0);
    let mos = if r <= 0.0 {
        1.0
    } else if r >= 100.0 {
        4.5
    } else {
        // the cubic dips under 1 for very small R
        (1.0 + 0.035 * r + r * (r - 60.0) * (100.0 - r) * 7e-6).clamp(1.0, 4.5)
    };
    Ok(QualityScore { r_factor: r, mos })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoQuality {
    pub width: f64,
    pub height: f64,
    pub frame_rate: f64,
}

impl VideoQuality {
    pub fn from_entry(entry: &StatsEntry) -> Option<VideoQuality> {
        Some(VideoQuality {
            width: entry.num("frame_width")?,
            height: entry.num("frame_height")?,
            frame_rate: entry.num("frames_per_second")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityGap {
    pub desired: VideoQuality,
    pub actual: VideoQuality,
    pub degraded: bool,
}

/// Flags video whose height or frame rate fell below half of what was asked.
pub fn detect_quality_gap(desired: VideoQuality, actual: VideoQuality) -> QualityGap {
    let degraded =
        actual.height < desired.height / 2.0 || actual.frame_rate < desired.frame_rate / 2.0;
    QualityGap {
        desired,
        actual,
        degraded,
    }
}
