use std::path::{Path, PathBuf};

use tbsim::dram::TimingParams;
use tbsim::engine::{run, run_with, RunConfig, RunOptions, Simulator};
use tbsim::workload::{Dim2, KernelSpec, MappingKind, MatrixMapping, WorkloadFile};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn one_access(accesses: u32, read_fraction: f64) -> RunConfig {
    let wl = WorkloadFile {
        schema_version: 1,
        cpu_traffic: None,
        kernel: KernelSpec {
            name: "one".into(),
            grid_dim: Dim2::new(1, 1),
            block_dim: Dim2::new(1, 1),
            warp_size: 1,
            compute_gap: 0,
            matrices: vec![MatrixMapping {
                base_addr: 0,
                element_size: 4,
                row_len: 1,
                mapping_kind: MappingKind::Clustered,
                accesses_per_thread: accesses,
                read_fraction,
            }],
        },
    };
    let mut cfg = RunConfig::new(wl);
    cfg.hardware.num_sms = 1;
    cfg
}

#[test]
fn single_request_hand_trace() {
    let cfg = one_access(1, 1.0);
    let t = TimingParams::gddr();
    let ic = cfg.interconnect;
    let out = run_with(&cfg, RunOptions { trace_issue: true }).unwrap();
    assert_eq!(out.log.len(), 1);
    let r = out.log[0];
    // Issued at cycle 0, reaches the controller after the request latency,
    // served on an idle bank, replied after the reply latency.
    assert_eq!(out.issue_log[0].cycle, 0);
    assert_eq!(r.t_enqueue, ic.request_latency);
    assert_eq!(r.t_issue, Some(ic.request_latency));
    let dram = t.tRCD + t.tCAS + t.tBURST;
    assert_eq!(r.t_complete, Some(ic.request_latency + dram));
    assert_eq!(r.row_hit, Some(false));
    let delivered = ic.request_latency + dram + ic.reply_latency;
    assert_eq!(out.report.cycles, delivered + 1);
    assert_eq!(out.report.gpu_mean_latency, dram as f64);
    assert_eq!(out.report.activates, 1);
    assert_eq!(out.report.local_ratio, 1.0);
    assert!(!out.report.truncated);
}

#[test]
fn second_access_to_open_row_is_a_hit() {
    // Two slots on the same line collapse in L1; use two lines of one row.
    let mut cfg = one_access(1, 1.0);
    if let tbsim::engine::WorkloadSource::Inline(w) = &mut cfg.workload {
        w.kernel.block_dim = Dim2::new(64, 1);
        w.kernel.warp_size = 64;
    }
    let out = run(&cfg).unwrap();
    let t = TimingParams::gddr();
    assert_eq!(out.log.len(), 2);
    let (a, b) = (out.log[0], out.log[1]);
    assert_eq!((a.row_hit, b.row_hit), (Some(false), Some(true)));
    assert_eq!(b.t_complete.unwrap(), a.t_complete.unwrap() + t.tCAS + t.tBURST);
    assert_eq!(out.report.rbhr, 0.5);
}

#[test]
fn writes_are_posted_and_never_fill_l1() {
    // Both slots hit the same line; each write still goes to DRAM.
    let out = run(&one_access(2, 0.0)).unwrap();
    assert_eq!(out.report.writes, 2);
    assert_eq!(out.report.reads, 0);
    assert_eq!(out.report.l1_hits, 0);
}

#[test]
fn kernel_without_accesses_is_degenerate() {
    let out = run(&one_access(0, 1.0)).unwrap();
    assert!(out.report.degenerate);
    assert!(out.log.is_empty());
    assert_eq!(out.report.blp, 0.0);
    assert!(!out.report.truncated);
}

#[test]
fn short_horizon_truncates() {
    let cfg = RunConfig::load(fixture("short_horizon.json")).unwrap();
    let out = run(&cfg).unwrap();
    assert!(out.report.truncated);
    assert_eq!(out.report.cycles, cfg.horizon);
}

#[test]
fn stepping_matches_run() {
    let cfg = RunConfig::load(fixture("fig9.json")).unwrap();
    let mut sim = Simulator::new(&cfg, RunOptions::default()).unwrap();
    while !sim.gpu_done() {
        sim.step().unwrap();
    }
    let stepped = sim.finish(false).unwrap();
    let whole = run(&cfg).unwrap();
    assert_eq!(stepped.report, whole.report);
    assert_eq!(stepped.log, whole.log);
}

#[test]
fn tight_reply_network_stalls_and_unbounded_does_not() {
    let mut cfg = RunConfig::load(fixture("mixed_plain.json")).unwrap();
    cfg.interconnect.reply_queue_capacity = Some(1);
    cfg.interconnect.reply_drain_per_cycle = Some(1);
    cfg.interconnect.reply_latency = 16;
    let tight = run(&cfg).unwrap().report;
    assert!(tight.reply_stalls > 0);
    cfg.interconnect.reply_queue_capacity = None;
    cfg.interconnect.reply_drain_per_cycle = None;
    let open = run(&cfg).unwrap().report;
    assert_eq!(open.reply_stalls, 0);
    assert!(open.cycles <= tight.cycles);
}

#[test]
fn small_buffers_create_backpressure() {
    let mut cfg = RunConfig::load(fixture("mixed_plain.json")).unwrap();
    cfg.disable_cpu = true;
    cfg.interconnect.request_buffer = 1;
    cfg.hardware.l1.mshr_entries = 1;
    let r = run(&cfg).unwrap().report;
    assert!(r.backpressure_stalls > 0);
    assert_eq!(r.cpu_requests, 0);
}

#[test]
fn disabling_cpu_traffic_removes_cpu_requests() {
    let mut cfg = RunConfig::load(fixture("mixed_hetero.json")).unwrap();
    let with = run(&cfg).unwrap().report;
    cfg.disable_cpu = true;
    let without = run(&cfg).unwrap().report;
    assert!(with.cpu_requests > 0);
    assert_eq!(without.cpu_requests, 0);
    assert_eq!(with.gpu_requests, without.gpu_requests);
}

#[test]
fn tbas_e_switches_rows_less_than_ccws_on_four_batches() {
    let mut cfg = RunConfig::load(fixture("fig9.json")).unwrap();
    let ccws = run(&cfg).unwrap().report;
    cfg.scheduler.policy = tbsim::sched::SchedPolicy::TbasE;
    let e = run(&cfg).unwrap().report;
    assert!(e.row_switches < ccws.row_switches);
    assert!(e.rbhr > ccws.rbhr);
}

#[test]
fn report_round_trips_through_json() {
    let out = run(&RunConfig::load(fixture("fig4_batched.json")).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    out.report.save(&p).unwrap();
    assert_eq!(tbsim::engine::MetricsReport::load(&p).unwrap(), out.report);
}
