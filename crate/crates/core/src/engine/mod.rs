//! The cycle loop: SMs with an L1, block dispatch, warp scheduling, a
//! request/reply interconnect and the DRAM pools.

mod config;
mod l1;
mod report;
mod sim;
mod trace;

pub use config::{
    BatchingConfig, HardwareConfig, InterconnectConfig, L1Config, PoolConfig, RunConfig, WorkloadSource,
    CONFIG_SCHEMA_VERSION,
};
pub use l1::L1Cache;
pub use report::{peak_window, MetricsReport, REPORT_SCHEMA_VERSION};
pub use sim::{run, run_with, DispatchRecord, IssueRecord, RunOptions, RunOutput, Simulator};
pub use trace::write_traces;
