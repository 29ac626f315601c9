//! Four thread batches on one SM under each warp scheduler: row switches,
//! row-buffer hit rate and the peak request burst.
//!
//!     cargo run --example scheduler_progression

use tbsim::engine::{run, RunConfig};
use tbsim::sched::SchedPolicy;

fn main() -> tbsim::Result<()> {
    let base = RunConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/fig9.json"))?;
    println!("{:<6} {:>8} {:>7} {:>6} {:>9} {:>7}", "policy", "switches", "rbhr", "burst", "delay", "cycles");
    for p in [SchedPolicy::Ccws, SchedPolicy::TbasC, SchedPolicy::TbasD, SchedPolicy::TbasE] {
        let mut cfg = base.clone();
        cfg.scheduler.policy = p;
        let r = run(&cfg)?.report;
        println!(
            "{:<6} {:>8} {:>7.3} {:>6} {:>9.1} {:>7}",
            format!("{p:?}"),
            r.row_switches,
            r.rbhr,
            r.peak_burst_100,
            r.mean_access_delay,
            r.cycles
        );
    }
    Ok(())
}
