use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bank::BankCounters;
use super::controller::MemoryRequest;
use super::timing::EnergyParams;
use crate::error::{Result, SimError};
use crate::memmap::Pool;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub activate: f64,
    pub read_write: f64,
    pub background: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn add(&mut self, o: &EnergyBreakdown) {
        self.activate += o.activate;
        self.read_write += o.read_write;
        self.background += o.background;
        self.total += o.total;
    }
}

/// `activates*e_act + reads*e_rd + writes*e_wr + banks*p_bg*runtime`.
pub fn energy_total(c: &BankCounters, p: &EnergyParams, banks: u64, runtime: u64) -> EnergyBreakdown {
    let activate = c.activates as f64 * p.e_activate;
    let read_write = c.reads as f64 * p.e_read + c.writes as f64 * p.e_write;
    let background = banks as f64 * p.p_background * runtime as f64;
    EnergyBreakdown {
        activate,
        read_write,
        background,
        total: activate + read_write + background,
    }
}

/// Per-agent slice of the request log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    pub accesses: u64,
    pub row_hits: u64,
    pub rbhr: f64,
    pub mean_latency: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DramMetrics {
    pub accesses: u64,
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    pub activates: u64,
    pub rbhr: f64,
    pub blp: f64,
    /// Mean `t_complete - t_enqueue`.
    pub mean_delay: f64,
    pub gpu: AgentStats,
    pub cpu: AgentStats,
    /// No request completed.
    pub degenerate: bool,
}

type BankKey = (Pool, u32, u32);

fn key(r: &MemoryRequest) -> BankKey {
    (r.pool, r.channel, r.bank)
}

fn service(r: &MemoryRequest) -> Result<(u64, u64)> {
    match (r.t_issue, r.t_complete) {
        (Some(i), Some(c)) if r.t_enqueue <= i && i <= c => Ok((i, c)),
        _ => Err(SimError::invalid(
            "request log",
            format!("request {} has inconsistent timestamps", r.id),
        )),
    }
}

/// Mean busy-bank count over cycles where at least one bank is serving a
/// request. A bank is busy on `[t_issue, t_complete)`.
pub fn bank_level_parallelism(log: &[MemoryRequest]) -> Result<f64> {
    // Union of service intervals per bank, then one sweep across banks.
    let mut per_bank: BTreeMap<BankKey, Vec<(u64, u64)>> = BTreeMap::new();
    for r in log {
        let (i, c) = service(r)?;
        if c > i {
            per_bank.entry(key(r)).or_default().push((i, c));
        }
    }
    let mut edges: Vec<(u64, i64)> = Vec::new();
    for mut iv in per_bank.into_values() {
        iv.sort_unstable();
        let (mut s, mut e) = iv[0];
        for &(a, b) in &iv[1..] {
            if a > e {
                edges.push((s, 1));
                edges.push((e, -1));
                s = a;
            }
            e = e.max(b);
        }
        edges.push((s, 1));
        edges.push((e, -1));
    }
    edges.sort_unstable();
    let (mut busy, mut weighted, mut active) = (0i64, 0u64, 0u64);
    let mut last = 0u64;
    for (t, d) in edges {
        if busy > 0 {
            weighted += busy as u64 * (t - last);
            active += t - last;
        }
        busy += d;
        last = t;
    }
    Ok(if active == 0 { 0.0 } else { weighted as f64 / active as f64 })
}

fn agent_stats(rs: &[&MemoryRequest]) -> AgentStats {
    let accesses = rs.len() as u64;
    let row_hits = rs.iter().filter(|r| r.row_hit == Some(true)).count() as u64;
    let lat: u64 = rs.iter().filter_map(|r| r.delay()).sum();
    AgentStats {
        accesses,
        row_hits,
        rbhr: ratio(row_hits, accesses),
        mean_latency: if accesses == 0 { 0.0 } else { lat as f64 / accesses as f64 },
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// RBHR, BLP and access delay from completed requests.
pub fn compute_metrics(log: &[MemoryRequest]) -> Result<DramMetrics> {
    if log.is_empty() {
        return Ok(DramMetrics {
            degenerate: true,
            ..Default::default()
        });
    }
    let mut m = DramMetrics::default();
    let mut delay = 0u64;
    for r in log {
        let (_, c) = service(r)?;
        m.accesses += 1;
        if r.is_read {
            m.reads += 1;
        } else {
            m.writes += 1;
        }
        match r.row_hit {
            Some(true) => m.row_hits += 1,
            Some(false) => m.activates += 1,
            None => {
                return Err(SimError::invalid("request log", format!("request {} never issued", r.id)));
            }
        }
        delay += c - r.t_enqueue;
    }
    m.rbhr = ratio(m.row_hits, m.accesses);
    m.blp = bank_level_parallelism(log)?;
    m.mean_delay = delay as f64 / m.accesses as f64;
    let (cpu, gpu): (Vec<&MemoryRequest>, Vec<&MemoryRequest>) = log.iter().partition(|r| r.agent.is_cpu());
    m.gpu = agent_stats(&gpu);
    m.cpu = agent_stats(&cpu);
    Ok(m)
}

/// Counter dump row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankCounterRow {
    pub pool: Pool,
    pub channel: u32,
    pub bank: u32,
    pub activates: u64,
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    pub row_switches: u64,
}

pub const COUNTER_SCHEMA_VERSION: u32 = 1;

pub fn write_bank_counters<W: Write>(rows: &[BankCounterRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| SimError::io("bank counter dump", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::controller::Agent;

    fn done(id: u64, bank: u32, issue: u64, complete: u64, hit: bool) -> MemoryRequest {
        MemoryRequest {
            id,
            pool: Pool::Gddr,
            channel: 0,
            bank,
            row: 0,
            column: 0,
            is_read: true,
            agent: Agent::Gpu { sm: 0, warp: 0, batch: 0 },
            line_addr: 0,
            t_enqueue: issue,
            t_issue: Some(issue),
            t_complete: Some(complete),
            row_hit: Some(hit),
        }
    }

    #[test]
    fn one_row_one_bank() {
        let n = 5;
        let log: Vec<_> = (0..n)
            .map(|i| done(i, 0, i * 6, i * 6 + 6, i > 0))
            .collect();
        let m = compute_metrics(&log).unwrap();
        assert_eq!(m.rbhr, (n - 1) as f64 / n as f64);
        assert_eq!(m.blp, 1.0);
    }

    #[test]
    fn four_overlapped_banks() {
        let log: Vec<_> = (0..4).map(|b| done(b as u64, b, 0, 10, false)).collect();
        assert_eq!(compute_metrics(&log).unwrap().blp, 4.0);
    }

    #[test]
    fn empty_log_is_degenerate() {
        let m = compute_metrics(&[]).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.accesses, 0);
    }

    #[test]
    fn background_only_without_accesses() {
        let e = energy_total(&BankCounters::default(), &EnergyParams::default(), 32, 1000);
        assert_eq!(e.activate, 0.0);
        assert_eq!(e.read_write, 0.0);
        assert!(e.background > 0.0);
        assert_eq!(e.total, e.background);
    }
}
