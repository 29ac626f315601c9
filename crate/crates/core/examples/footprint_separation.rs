//! Four blocks, two SMs: interleaved dispatch with first-touch placement
//! against serial batched dispatch with bank coloring.
//!
//!     cargo run --example footprint_separation

use tbsim::dram::Agent;
use tbsim::engine::{run, RunConfig};

fn main() -> tbsim::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    for f in ["fig4_interleaved.json", "fig4_batched.json", "fig6_batched.json"] {
        let out = run(&RunConfig::load(format!("{dir}/{f}"))?)?;
        let r = &out.report;
        println!(
            "{f}: stride {}, local {} / remote {} (ratio {:.2})",
            r.stride, r.local_accesses, r.remote_accesses, r.local_ratio
        );
        for d in &out.dispatch_log {
            println!("  cycle {} block ({},{}) batch {} -> SM{}", d.cycle, d.block_x, d.block_y, d.batch, d.sm);
        }
        let mut seen = std::collections::BTreeSet::new();
        for q in &out.log {
            if let Agent::Gpu { sm, .. } = q.agent {
                seen.insert((sm, q.bank, q.row));
            }
        }
        for (sm, bank, row) in seen {
            println!("  SM{sm} touches bank {bank} row {row}");
        }
    }
    Ok(())
}
