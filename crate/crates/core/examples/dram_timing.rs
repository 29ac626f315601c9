//! Drive one DRAM channel by hand: row hits, conflicts, FR-FCFS reordering
//! and what an aging cap does to a starved request.
//!
//!     cargo run --example dram_timing

use tbsim::dram::{Agent, Arbitration, Channel, McQueue, MemoryRequest, TimingParams};
use tbsim::memmap::Pool;

fn req(id: u64, bank: u32, row: u32) -> MemoryRequest {
    MemoryRequest {
        id,
        pool: Pool::Gddr,
        channel: 0,
        bank,
        row,
        column: 0,
        is_read: true,
        agent: Agent::Gpu { sm: 0, warp: 0, batch: 0 },
        line_addr: 0,
        t_enqueue: 0,
        t_issue: None,
        t_complete: None,
        row_hit: None,
    }
}

/// Queue everything at cycle 0 and tick until drained.
fn drain(rows: &[(u32, u32)], aging: Option<u32>) -> tbsim::Result<Vec<MemoryRequest>> {
    let t = TimingParams::gddr();
    let mut ch = Channel::new(2, McQueue::new(64, Arbitration::FrFcfs, aging));
    for (i, &(bank, row)) in rows.iter().enumerate() {
        ch.queue.try_push(req(i as u64, bank, row)).expect("queue has room");
    }
    let mut done = Vec::new();
    let mut cycle = 0;
    while done.len() < rows.len() {
        if let Some(r) = ch.tick(&t, cycle)? {
            done.push(r);
        }
        cycle += 1;
    }
    Ok(done)
}

fn print(title: &str, log: &[MemoryRequest]) {
    println!("{title}");
    for r in log {
        println!(
            "  req {:>2} bank {} row {}  issue {:>3} done {:>3}  {}",
            r.id,
            r.bank,
            r.row,
            r.t_issue.unwrap(),
            r.t_complete.unwrap(),
            if r.row_hit == Some(true) { "hit" } else { "miss" }
        );
    }
}

fn main() -> tbsim::Result<()> {
    let t = TimingParams::gddr();
    println!(
        "hit {} cycles, idle-bank miss {}, conflict {}\n",
        t.hit_latency(),
        t.idle_miss_latency(),
        t.conflict_latency()
    );
    // Row 7, row 9, row 7 on bank 0: FR-FCFS serves the second row-7 access
    // before row 9 once row 7 is open.
    print("FR-FCFS on one bank", &drain(&[(0, 7), (0, 9), (0, 7)], None)?);
    // Two banks overlap.
    print("two banks in parallel", &drain(&[(0, 1), (1, 1), (0, 1), (1, 1)], None)?);
    // A stream of row-3 hits with one row-4 request queued behind the first.
    let mut stream = vec![(0, 3), (0, 4)];
    stream.extend(std::iter::repeat_n((0, 3), 10));
    let plain = drain(&stream, None)?;
    let capped = drain(&stream, Some(2))?;
    let pos = |log: &[MemoryRequest]| log.iter().position(|r| r.row == 4).unwrap();
    println!(
        "\nrow-4 request served {}th without aging, {}th with an aging cap of 2",
        pos(&plain) + 1,
        pos(&capped) + 1
    );
    Ok(())
}
