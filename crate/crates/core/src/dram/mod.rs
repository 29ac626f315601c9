//! DRAM pools: banks with row buffers, FR-FCFS open-page controllers,
//! timing, energy and the request-log metrics.

mod bank;
mod controller;
mod metrics;
mod timing;

pub use bank::{bank_advance, BankCounters, BankState, Service};
pub use controller::{mc_pick, Agent, Arbitration, Channel, McQueue, MemoryRequest, MC_QUEUE_CAPACITY};
pub use metrics::{
    bank_level_parallelism, compute_metrics, energy_total, write_bank_counters, AgentStats, BankCounterRow,
    DramMetrics, EnergyBreakdown, COUNTER_SCHEMA_VERSION,
};
pub use timing::{EnergyParams, TimingParams};
