//! Cycle-driven GPU memory subsystem simulator: thread batching, serial
//! block dispatch, bank coloring and batch-aware warp scheduling over an
//! FR-FCFS DRAM model.

pub mod batching;
pub mod cli;
pub mod dispatch;
pub mod dram;
pub mod engine;
pub mod error;
pub mod memmap;
pub mod sched;
pub mod workload;

pub use error::{Result, SimError};
