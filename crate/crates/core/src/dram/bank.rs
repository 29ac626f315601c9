use serde::{Deserialize, Serialize};

use super::timing::TimingParams;
use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankCounters {
    pub activates: u64,
    pub reads: u64,
    pub writes: u64,
    pub row_hits: u64,
    /// Activates that first had to close another open row.
    pub row_switches: u64,
}

impl BankCounters {
    pub fn accesses(&self) -> u64 {
        self.reads + self.writes
    }

    pub fn add(&mut self, o: &BankCounters) {
        self.activates += o.activates;
        self.reads += o.reads;
        self.writes += o.writes;
        self.row_hits += o.row_hits;
        self.row_switches += o.row_switches;
    }
}

/// One bank with its row buffer. Open-page: a row stays open until a miss
/// replaces it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BankState {
    pub open_row: Option<u32>,
    pub busy_until: u64,
    pub counters: BankCounters,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Service {
    pub complete: u64,
    pub row_hit: bool,
}

impl BankState {
    pub fn ready(&self, cycle: u64) -> bool {
        cycle >= self.busy_until
    }

    pub fn is_hit(&self, row: u32) -> bool {
        self.open_row == Some(row)
    }
}

/// Serves one column access to `row` starting at `cycle`.
pub fn bank_advance(
    bank: &mut BankState,
    row: u32,
    is_read: bool,
    timing: &TimingParams,
    cycle: u64,
) -> Result<Service> {
    if !bank.ready(cycle) {
        return Err(SimError::Invariant {
            cycle,
            msg: format!("bank busy until {}", bank.busy_until),
        });
    }
    let (latency, row_hit) = match bank.open_row {
        Some(r) if r == row => (timing.hit_latency(), true),
        Some(_) => (timing.conflict_latency(), false),
        None => (timing.idle_miss_latency(), false),
    };
    let c = &mut bank.counters;
    if row_hit {
        c.row_hits += 1;
    } else {
        c.activates += 1;
        if bank.open_row.is_some() {
            c.row_switches += 1;
        }
    }
    if is_read {
        c.reads += 1;
    } else {
        c.writes += 1;
    }
    bank.open_row = Some(row);
    bank.busy_until = cycle + latency;
    Ok(Service {
        complete: bank.busy_until,
        row_hit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> TimingParams {
        TimingParams {
            tRCD: 4,
            tRP: 4,
            tCAS: 4,
            tRC: 12,
            tBURST: 2,
            clock_period: 1.0,
        }
    }

    #[test]
    fn hit_takes_cas_plus_burst() {
        let mut b = BankState {
            open_row: Some(3),
            ..Default::default()
        };
        let s = bank_advance(&mut b, 3, true, &t(), 10).unwrap();
        assert_eq!(s.complete, 16);
        assert!(s.row_hit);
        assert_eq!(b.counters.row_hits, 1);
    }

    #[test]
    fn conflict_pays_precharge_and_activate() {
        let mut b = BankState {
            open_row: Some(3),
            ..Default::default()
        };
        let s = bank_advance(&mut b, 4, true, &t(), 0).unwrap();
        assert_eq!(s.complete, 14);
        assert_eq!(b.counters.activates, 1);
        assert_eq!(b.counters.row_switches, 1);
        assert_eq!(b.open_row, Some(4));
    }

    #[test]
    fn hand_simulated_three_requests() {
        let mut b = BankState::default();
        let mut c = 0;
        let mut ends = vec![];
        for row in [7, 7, 9] {
            let s = bank_advance(&mut b, row, true, &t(), c).unwrap();
            c = s.complete;
            ends.push(c);
        }
        // idle miss 10, hit 6, conflict 14
        assert_eq!(ends, vec![10, 16, 30]);
        assert_eq!(b.counters.activates, 2);
        assert_eq!(b.counters.row_hits, 1);
    }

    #[test]
    fn busy_bank_faults() {
        let mut b = BankState::default();
        bank_advance(&mut b, 0, true, &t(), 0).unwrap();
        assert!(matches!(
            bank_advance(&mut b, 0, true, &t(), 1),
            Err(SimError::Invariant { .. })
        ));
    }
}
