//! Build a kernel in code, step the simulator by hand, then write the
//! per-request traces.
//!
//!     cargo run --example custom_workload [-- OUT_DIR]

use tbsim::engine::{write_traces, RunConfig, RunOptions, Simulator};
use tbsim::sched::SchedPolicy;
use tbsim::workload::{Dim2, KernelSpec, MappingKind, MatrixMapping, WorkloadFile};

fn main() -> tbsim::Result<()> {
    let kernel = KernelSpec {
        name: "stencil-ish".into(),
        grid_dim: Dim2::new(8, 2),
        block_dim: Dim2::new(16, 2),
        warp_size: 16,
        compute_gap: 3,
        matrices: vec![
            MatrixMapping {
                base_addr: 0,
                element_size: 4,
                row_len: 512,
                mapping_kind: MappingKind::Interleaved,
                accesses_per_thread: 2,
                read_fraction: 1.0,
            },
            MatrixMapping {
                base_addr: 1 << 20,
                element_size: 4,
                row_len: 1024,
                mapping_kind: MappingKind::Clustered,
                accesses_per_thread: 2,
                read_fraction: 0.0,
            },
        ],
    };
    let mut cfg = RunConfig::new(WorkloadFile {
        schema_version: 1,
        kernel,
        cpu_traffic: None,
    });
    cfg.hardware.num_sms = 4;
    cfg.scheduler.policy = SchedPolicy::TbasE;
    cfg.validate()?;

    let mut sim = Simulator::new(&cfg, RunOptions { trace_issue: true })?;
    println!("plan: stride {} ({:?}), {} batches", sim.plan().stride, sim.plan().formation, sim.plan().batches.len());
    while !sim.gpu_done() {
        sim.step()?;
        if sim.cycle() % 200 == 0 {
            let busy: u64 = sim.bank_counters().iter().map(|b| b.reads + b.writes).sum();
            println!("  cycle {:>5}: {busy} DRAM accesses so far", sim.cycle());
        }
    }
    let out = sim.finish(false)?;
    println!("{}", tbsim::cli::summary_line(&out.report));

    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tbsim-custom"));
    std::fs::create_dir_all(&dir).map_err(|e| tbsim::SimError::Io { path: dir.clone(), source: e })?;
    write_traces(&out, &dir)?;
    println!("traces in {}", dir.display());
    Ok(())
}
