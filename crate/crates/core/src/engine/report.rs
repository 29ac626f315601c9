use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batching::Formation;
use crate::dram::EnergyBreakdown;
use crate::error::{Result, SimError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub kernel: String,
    pub cycles: u64,
    /// Horizon reached before the kernel finished.
    pub truncated: bool,
    /// No DRAM access completed.
    pub degenerate: bool,
    pub stride: u32,
    pub formation: Option<Formation>,
    pub warp_instructions: u64,
    /// Warp instructions per cycle, all SMs.
    pub ipc: f64,
    pub blp: f64,
    pub rbhr: f64,
    pub gpu_rbhr: f64,
    pub cpu_rbhr: f64,
    pub local_accesses: u64,
    pub remote_accesses: u64,
    pub local_ratio: f64,
    /// Mean enqueue-to-completion cycles over all DRAM accesses.
    pub mean_access_delay: f64,
    pub gpu_mean_latency: f64,
    pub cpu_mean_latency: f64,
    pub gpu_requests: u64,
    pub cpu_requests: u64,
    pub cpu_intensive: bool,
    /// Cycles completed replies spent waiting for reply-queue space, summed
    /// over replies.
    pub reply_stalls: u64,
    /// SM issue slots lost to a full request buffer or MSHR file.
    pub backpressure_stalls: u64,
    /// Requests refused by a full controller queue, summed per cycle.
    pub mc_queue_rejections: u64,
    pub reads: u64,
    pub writes: u64,
    pub activates: u64,
    pub row_hits: u64,
    pub row_switches: u64,
    /// Most GPU requests reaching the controllers in any 100-cycle window.
    pub peak_burst_100: u64,
    pub energy: EnergyBreakdown,
    pub spilled_pages: u64,
    pub l1_hits: u64,
    pub l1_misses: u64,
    /// L1 read misses per 1000 warp instructions.
    pub mpki_proxy: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| SimError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| SimError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    /// Column names of [`MetricsReport::metrics`].
    pub fn metric_names() -> Vec<&'static str> {
        MetricsReport::default().metrics().into_iter().map(|(n, _)| n).collect()
    }

    /// Named numeric metrics, in a fixed order, for tables.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("cycles", self.cycles as f64),
            ("ipc", self.ipc),
            ("blp", self.blp),
            ("rbhr", self.rbhr),
            ("gpu_rbhr", self.gpu_rbhr),
            ("cpu_rbhr", self.cpu_rbhr),
            ("local_ratio", self.local_ratio),
            ("mean_access_delay", self.mean_access_delay),
            ("gpu_mean_latency", self.gpu_mean_latency),
            ("cpu_mean_latency", self.cpu_mean_latency),
            ("reply_stalls", self.reply_stalls as f64),
            ("backpressure_stalls", self.backpressure_stalls as f64),
            ("activates", self.activates as f64),
            ("row_hits", self.row_hits as f64),
            ("row_switches", self.row_switches as f64),
            ("peak_burst_100", self.peak_burst_100 as f64),
            ("energy_activate", self.energy.activate),
            ("energy_read_write", self.energy.read_write),
            ("energy_background", self.energy.background),
            ("energy_total", self.energy.total),
            ("spilled_pages", self.spilled_pages as f64),
            ("mpki_proxy", self.mpki_proxy),
        ]
    }
}

/// Largest number of timestamps falling in any `window`-cycle span.
pub fn peak_window(times: &mut [u64], window: u64) -> u64 {
    times.sort_unstable();
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi] - times[lo] >= window {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_window_counts_half_open_spans() {
        assert_eq!(peak_window(&mut [], 100), 0);
        assert_eq!(peak_window(&mut [0, 99, 100, 150, 199], 100), 3);
        assert_eq!(peak_window(&mut [5, 5, 5], 1), 3);
    }
}
