//! Sweep schedulers and allocators over the mixed workload and print the
//! summary normalized to the CCWS cell.
//!
//!     cargo run --release --example policy_sweep [-- OUT_DIR]

use tbsim::cli::{cmd_compare, CellStatus};

fn main() -> tbsim::Result<()> {
    let exp = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/experiments/schedulers.json");
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tbsim-sweep"));
    let o = cmd_compare(exp.as_ref(), Some(&out), None)?;
    let base = o.results[o.baseline].report.clone().expect("baseline ran");
    println!("{:<44} {:>7} {:>8} {:>8} {:>8}", "cell", "ipc", "rbhr", "energy", "local");
    for r in &o.results {
        match (&r.status, &r.report) {
            (CellStatus::Failed(m), _) => println!("{:<44} failed: {m}", r.cell.key()),
            (_, Some(rep)) => println!(
                "{:<44} {:>7.3} {:>8.3} {:>8.3} {:>8.3}",
                r.cell.key(),
                rep.ipc / base.ipc,
                rep.rbhr / base.rbhr,
                rep.energy.total / base.energy.total,
                rep.local_ratio
            ),
            _ => {}
        }
    }
    println!("summary: {}\nlong form: {}", o.summary_path.display(), o.long_path.display());
    Ok(())
}
