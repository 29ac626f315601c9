use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use super::sim::RunOutput;
use crate::dram::{write_bank_counters, Agent};
use crate::error::{Result, SimError};

#[derive(Serialize)]
struct RequestRow {
    id: u64,
    agent: &'static str,
    sm: Option<usize>,
    warp: Option<usize>,
    batch: Option<u32>,
    pool: &'static str,
    channel: u32,
    bank: u32,
    row: u32,
    is_read: bool,
    t_enqueue: u64,
    t_issue: u64,
    t_complete: u64,
    row_hit: bool,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(File::create(&p).map_err(|e| SimError::io(&p, e))?))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| SimError::io(dir.join(name), e))
}

/// dispatch.csv, issue.csv (when recorded), requests.csv, page_table.csv
/// and bank_counters.csv under `dir`.
pub fn write_traces(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    write_rows(dir, "dispatch.csv", &out.dispatch_log)?;
    if !out.issue_log.is_empty() {
        write_rows(dir, "issue.csv", &out.issue_log)?;
    }
    write_rows(
        dir,
        "requests.csv",
        out.log.iter().map(|r| {
            let (agent, sm, warp, batch) = match r.agent {
                Agent::Gpu { sm, warp, batch } => ("gpu", Some(sm), Some(warp), Some(batch)),
                Agent::Cpu => ("cpu", None, None, None),
            };
            RequestRow {
                id: r.id,
                agent,
                sm,
                warp,
                batch,
                pool: r.pool.name(),
                channel: r.channel,
                bank: r.bank,
                row: r.row,
                is_read: r.is_read,
                t_enqueue: r.t_enqueue,
                t_issue: r.t_issue.unwrap_or_default(),
                t_complete: r.t_complete.unwrap_or_default(),
                row_hit: r.row_hit.unwrap_or_default(),
            }
        }),
    )?;
    out.page_table.dump_csv(create(dir, "page_table.csv")?)?;
    write_bank_counters(&out.bank_counters, create(dir, "bank_counters.csv")?)
}
