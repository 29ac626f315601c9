//! GPU kernel plus synthetic CPU traffic: plain coloring against the
//! CPU/GPU row split with CPU-first scheduling.
//!
//!     cargo run --release --example hetero_mix

use tbsim::engine::{run, RunConfig};

fn main() -> tbsim::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let plain = RunConfig::load(format!("{dir}/mixed_plain.json"))?;
    let comb = RunConfig::load(format!("{dir}/mixed_hetero.json"))?;
    let mut alone = comb.clone();
    alone.disable_cpu = true;
    println!(
        "{:<22} {:>7} {:>9} {:>8} {:>8} {:>9} {:>5}",
        "setup", "cycles", "gpu rbhr", "gpu lat", "cpu lat", "cpu reqs", "busy"
    );
    for (name, cfg) in [
        ("coloring + FR-FCFS", &plain),
        ("row split + CPU first", &comb),
        ("GPU alone", &alone),
    ] {
        let r = run(cfg)?.report;
        println!(
            "{:<22} {:>7} {:>9.4} {:>8.1} {:>8.1} {:>9} {:>5}",
            name, r.cycles, r.gpu_rbhr, r.gpu_mean_latency, r.cpu_mean_latency, r.cpu_requests, r.cpu_intensive
        );
    }
    Ok(())
}
