//! `/proc/stat` sampler and the periodic publisher feeding `cpu.*`
//! controls.

use std::sync::Arc;
use std::time::Duration;

use rtcshim_core::cpu::{publish_sample, CoreLoad, CpuSample, CpuSampler, PlatformUnsupported};
use rtcshim_core::Engine;

/// Jiffies spent busy and in total, summed over the fields of one line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CpuTimes {
    pub busy: u64,
    pub total: u64,
}

/// Aggregate line first, then one entry per `cpuN` line.
pub fn parse_proc_stat(text: &str) -> Option<(CpuTimes, Vec<(usize, CpuTimes)>)> {
    let mut total = None;
    let mut cores = Vec::new();
    for line in text.lines() {
        let mut fields = line.split_whitespace();
        let Some(label) = fields.next().filter(|l| l.starts_with("cpu")) else {
            continue;
        };
        let values: Vec<u64> = fields.map_while(|f| f.parse().ok()).collect();
        if values.len() < 4 {
            return None;
        }
        // user nice system idle iowait irq softirq steal
        let all: u64 = values.iter().take(8).sum();
        let idle = values[3] + values.get(4).copied().unwrap_or(0);
        let times = CpuTimes {
            busy: all - idle,
            total: all,
        };
        match label[3..].parse::<usize>() {
            Ok(n) => cores.push((n, times)),
            Err(_) if label == "cpu" => total = Some(times),
            Err(_) => {}
        }
    }
    Some((total?, cores))
}

fn load(prev: CpuTimes, curr: CpuTimes) -> f64 {
    let total = curr.total.saturating_sub(prev.total);
    if total == 0 {
        return 0.0;
    }
    100.0 * curr.busy.saturating_sub(prev.busy) as f64 / total as f64
}

/// Reports load since the previous call (since construction for the
/// first one).
pub struct ProcStatSampler {
    path: std::path::PathBuf,
    last: Option<(CpuTimes, Vec<(usize, CpuTimes)>)>,
}

impl ProcStatSampler {
    pub fn new() -> Self {
        Self::at("/proc/stat")
    }

    pub fn at(path: impl Into<std::path::PathBuf>) -> Self {
        let mut s = ProcStatSampler {
            path: path.into(),
            last: None,
        };
        s.last = s.read();
        s
    }

    fn read(&self) -> Option<(CpuTimes, Vec<(usize, CpuTimes)>)> {
        parse_proc_stat(&std::fs::read_to_string(&self.path).ok()?)
    }
}

impl Default for ProcStatSampler {
    fn default() -> Self {
        Self::new()
    }
}

impl CpuSampler for ProcStatSampler {
    fn sample(&mut self, t_ms: u64) -> Result<CpuSample, PlatformUnsupported> {
        let (total, cores) = self.read().ok_or(PlatformUnsupported)?;
        let (prev_total, prev_cores) = self.last.take().unwrap_or_default();
        let per_core = cores
            .iter()
            .map(|(n, t)| {
                let prev = prev_cores.iter().find(|(m, _)| m == n).map(|p| p.1).unwrap_or_default();
                CoreLoad {
                    core: *n,
                    load_percent: load(prev, *t),
                }
            })
            .collect();
        let sample = CpuSample {
            t_ms,
            total_load_percent: load(prev_total, total),
            per_core,
        };
        self.last = Some((total, cores));
        Ok(sample.clamped())
    }
}

/// Samples every `period` until the sampler reports the platform as
/// unsupported.
pub async fn run_monitor(engine: Arc<Engine>, mut sampler: Box<dyn CpuSampler>, period: Duration) {
    let mut tick = tokio::time::interval(period);
    tick.tick().await;
    loop {
        tick.tick().await;
        match sampler.sample(engine.clock().now_ms()) {
            Ok(sample) => publish_sample(&engine, &sample),
            Err(e) => {
                tracing::warn!("{e}; cpu monitor disabled");
                return;
            }
        }
    }
}
