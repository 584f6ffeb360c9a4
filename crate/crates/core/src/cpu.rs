//! CPU load samples and their publication onto the controls bus.

use serde::{Deserialize, Serialize};

use crate::category::CategoryId;
use crate::engine::{Engine, InterceptContext, InterceptKind, Payload};

pub const DEFAULT_CPU_SAMPLE_PERIOD_MS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreLoad {
    pub core: usize,
    pub load_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuSample {
    pub t_ms: u64,
    pub total_load_percent: f64,
    #[serde(default)]
    pub per_core: Vec<CoreLoad>,
}

impl CpuSample {
    pub fn uniform(t_ms: u64, load: f64, cores: usize) -> Self {
        CpuSample {
            t_ms,
            total_load_percent: load,
            per_core: (0..cores)
                .map(|core| CoreLoad { core, load_percent: load })
                .collect(),
        }
    }

    /// Clamps every load into `[0, 100]`.
    pub fn clamped(mut self) -> Self {
        self.total_load_percent = self.total_load_percent.clamp(0.0, 100.0);
        for c in &mut self.per_core {
            c.load_percent = c.load_percent.clamp(0.0, 100.0);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("CPU sampling is not supported on this platform")]
pub struct PlatformUnsupported;

/// Source of CPU samples; the real one reads OS counters, tests inject
/// fixed values.
pub trait CpuSampler: Send {
    fn sample(&mut self, t_ms: u64) -> Result<CpuSample, PlatformUnsupported>;
}

/// Always reports the same load.
#[derive(Debug, Clone)]
pub struct FixedSampler {
    pub load_percent: f64,
    pub cores: usize,
}

impl CpuSampler for FixedSampler {
    fn sample(&mut self, t_ms: u64) -> Result<CpuSample, PlatformUnsupported> {
        Ok(CpuSample::uniform(t_ms, self.load_percent, self.cores))
    }
}

/// Publishes `cpu.load` and `cpu.core<N>`, then hands the sample to the
/// Cpu category so an installed transform can derive further controls.
pub fn publish_sample(engine: &Engine, sample: &CpuSample) {
    let sample = sample.clone().clamped();
    let controls = engine.controls();
    let _ = controls.set("cpu.load", sample.total_load_percent);
    for core in &sample.per_core {
        let _ = controls.set(&format!("cpu.core{}", core.core), core.load_percent);
    }
    let mut ctx = InterceptContext::new("cpu", "sample", InterceptKind::Event);
    let outcome = engine.dispatch(CategoryId::Cpu, &mut ctx, Payload::Cpu(sample));
    if let Some(err) = outcome.failure() {
        tracing::warn!(error = %err, "cpu transform failed");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;

    #[test]
    fn publishes_total_and_cores() {
        let engine = Engine::default();
        let mut sampler = FixedSampler { load_percent: 80.0, cores: 2 };
        publish_sample(&engine, &sampler.sample(10).unwrap());
        assert_eq!(engine.controls().get("cpu.load"), Some(Scalar::Num(80.0)));
        assert_eq!(engine.controls().get("cpu.core1"), Some(Scalar::Num(80.0)));
    }

    #[test]
    fn clamps_out_of_range() {
        let s = CpuSample::uniform(0, 140.0, 1).clamped();
        assert_eq!(s.total_load_percent, 100.0);
        assert_eq!(s.per_core[0].load_percent, 100.0);
    }
}
