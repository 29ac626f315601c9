use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batching::ProfileOptions;
use crate::dispatch::DispatchKind;
use crate::dram::{Arbitration, EnergyParams, TimingParams, MC_QUEUE_CAPACITY};
use crate::error::{Result, SimError};
use crate::memmap::{AddressLayout, AllocPolicy, PlacementOptions};
use crate::sched::SchedConfig;
use crate::workload::WorkloadFile;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Workload given by path (relative to the config file) or inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadSource {
    Path(PathBuf),
    Inline(Box<WorkloadFile>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L1Config {
    pub sets: usize,
    pub ways: usize,
    pub line_bytes: u64,
    /// Outstanding distinct read lines.
    pub mshr_entries: usize,
}

impl Default for L1Config {
    /// 16 KiB of 128 B lines.
    fn default() -> Self {
        L1Config {
            sets: 32,
            ways: 4,
            line_bytes: 128,
            mshr_entries: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardwareConfig {
    pub num_sms: usize,
    pub max_blocks_per_sm: usize,
    pub max_threads_per_sm: u32,
    pub l1: L1Config,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            num_sms: 8,
            max_blocks_per_sm: 8,
            max_threads_per_sm: 1536,
            l1: L1Config::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub layout: AddressLayout,
    pub timing: TimingParams,
    #[serde(default)]
    pub energy: EnergyParams,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
}

fn default_queue() -> usize {
    MC_QUEUE_CAPACITY
}

impl PoolConfig {
    pub fn gddr() -> Self {
        PoolConfig {
            layout: AddressLayout::default(),
            timing: TimingParams::gddr(),
            energy: EnergyParams::default(),
            queue_capacity: MC_QUEUE_CAPACITY,
        }
    }

    /// One channel of 8 banks, same page size as the GDDR default.
    pub fn ddr() -> Self {
        PoolConfig {
            layout: AddressLayout {
                byte_offset_bits: 6,
                column_bits: 7,
                channel_bits: 0,
                bank_bits: 3,
                row_bits: 16,
                page_offset_bits: 12,
            },
            timing: TimingParams::ddr(),
            energy: EnergyParams {
                e_activate: 12.0,
                e_read: 5.0,
                e_write: 5.5,
                p_background: 0.03,
            },
            queue_capacity: MC_QUEUE_CAPACITY,
        }
    }

    fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.timing.validate()?;
        self.energy.validate()?;
        if self.queue_capacity == 0 {
            return Err(SimError::invalid("pool", "queue_capacity must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterconnectConfig {
    /// SM to controller cycles.
    pub request_latency: u64,
    /// Controller to SM cycles.
    pub reply_latency: u64,
    /// Per-SM request buffer; a full buffer blocks issue.
    pub request_buffer: usize,
    /// Per-SM reply queue; `None` is unbounded.
    pub reply_queue_capacity: Option<usize>,
    /// Replies each SM accepts per cycle; `None` is unbounded.
    pub reply_drain_per_cycle: Option<usize>,
}

impl Default for InterconnectConfig {
    fn default() -> Self {
        InterconnectConfig {
            request_latency: 4,
            reply_latency: 4,
            request_buffer: 16,
            reply_queue_capacity: Some(8),
            reply_drain_per_cycle: Some(1),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchingConfig {
    /// Skip profiling and group by this stride.
    pub stride: Option<u32>,
    /// Load a cached plan instead of profiling.
    pub plan_file: Option<PathBuf>,
    pub profile: ProfileOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    pub workload: WorkloadSource,
    #[serde(default = "default_dispatch")]
    pub dispatch: DispatchKind,
    /// Seeded shuffle of idle SMs under interleaved dispatch.
    #[serde(default)]
    pub interleaved_shuffle: bool,
    #[serde(default = "default_alloc")]
    pub allocator: AllocPolicy,
    #[serde(default)]
    pub scheduler: SchedConfig,
    #[serde(default)]
    pub arbitration: Arbitration,
    /// FR-FCFS bypass limit; absent means pure FR-FCFS.
    #[serde(default)]
    pub aging_cap: Option<u32>,
    #[serde(default)]
    pub hardware: HardwareConfig,
    #[serde(default = "PoolConfig::gddr")]
    pub gddr: PoolConfig,
    #[serde(default)]
    pub ddr: Option<PoolConfig>,
    #[serde(default)]
    pub placement: PlacementOptions,
    #[serde(default)]
    pub interconnect: InterconnectConfig,
    #[serde(default)]
    pub batching: BatchingConfig,
    /// CPU request rate (per 1000 cycles) above which the CPU side counts
    /// as memory intensive.
    #[serde(default = "default_intensity")]
    pub cpu_intensity_threshold: f64,
    /// Drop the workload's CPU traffic.
    #[serde(default)]
    pub disable_cpu: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
}

fn schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_dispatch() -> DispatchKind {
    DispatchKind::Serial
}
fn default_alloc() -> AllocPolicy {
    AllocPolicy::Coloring
}
fn default_intensity() -> f64 {
    20.0
}
fn default_horizon() -> u64 {
    1_000_000
}

impl RunConfig {
    /// Defaults around an inline workload.
    pub fn new(workload: WorkloadFile) -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            workload: WorkloadSource::Inline(Box::new(workload)),
            dispatch: default_dispatch(),
            interleaved_shuffle: false,
            allocator: default_alloc(),
            scheduler: SchedConfig::default(),
            arbitration: Arbitration::default(),
            aging_cap: None,
            hardware: HardwareConfig::default(),
            gddr: PoolConfig::gddr(),
            ddr: None,
            placement: PlacementOptions::default(),
            interconnect: InterconnectConfig::default(),
            batching: BatchingConfig::default(),
            cpu_intensity_threshold: default_intensity(),
            disable_cpu: false,
            seed: 0,
            horizon: default_horizon(),
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|source| SimError::Parse {
            path: path.to_owned(),
            source,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Reads and validates a config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let cfg = Self::from_json(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let WorkloadSource::Path(p) = &mut self.workload {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.batching.plan_file {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn load_workload(&self) -> Result<WorkloadFile> {
        match &self.workload {
            WorkloadSource::Path(p) => WorkloadFile::load(p),
            WorkloadSource::Inline(w) => {
                w.validate()?;
                Ok((**w).clone())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(SimError::invalid(
                "config",
                format!("unsupported schema_version {}", self.schema_version),
            ));
        }
        let hw = &self.hardware;
        if hw.num_sms == 0 || hw.max_blocks_per_sm == 0 || hw.max_threads_per_sm == 0 {
            return Err(SimError::invalid("hardware", "SM counts and limits must be >= 1"));
        }
        let l1 = &hw.l1;
        if l1.sets == 0 || l1.ways == 0 || l1.mshr_entries == 0 || !l1.line_bytes.is_power_of_two() {
            return Err(SimError::invalid(
                "hardware.l1",
                "sets, ways and mshr_entries must be >= 1 and line_bytes a power of two",
            ));
        }
        self.gddr.validate()?;
        if let Some(d) = &self.ddr {
            d.validate()?;
        }
        if l1.line_bytes > self.gddr.layout.page_size() {
            return Err(SimError::invalid("hardware.l1", "line_bytes exceeds the page size"));
        }
        if self.interconnect.request_buffer == 0
            || self.interconnect.reply_queue_capacity == Some(0)
            || self.interconnect.reply_drain_per_cycle == Some(0)
        {
            return Err(SimError::invalid("interconnect", "buffer sizes and drain rate must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(SimError::invalid("config", "horizon must be >= 1"));
        }
        if self.batching.stride == Some(0) {
            return Err(SimError::invalid("batching", "stride must be >= 1"));
        }
        if self.scheduler.ccws_capacity == 0 {
            return Err(SimError::invalid("scheduler", "ccws_capacity must be >= 1"));
        }
        Ok(())
    }
}
