use serde::{Deserialize, Serialize};

use super::bank::{bank_advance, BankState};
use super::timing::TimingParams;
use crate::error::{Result, SimError};
use crate::memmap::Pool;

/// Request queue entries per channel.
pub const MC_QUEUE_CAPACITY: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Agent {
    Gpu { sm: usize, warp: usize, batch: u32 },
    Cpu,
}

impl Agent {
    pub fn is_cpu(&self) -> bool {
        matches!(self, Agent::Cpu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRequest {
    /// Global arrival order; lower is older.
    pub id: u64,
    pub pool: Pool,
    pub channel: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
    pub is_read: bool,
    pub agent: Agent,
    /// Cache line (GPU) or access (CPU) address, physical.
    pub line_addr: u64,
    pub t_enqueue: u64,
    pub t_issue: Option<u64>,
    pub t_complete: Option<u64>,
    pub row_hit: Option<bool>,
}

impl MemoryRequest {
    pub fn delay(&self) -> Option<u64> {
        Some(self.t_complete? - self.t_enqueue)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arbitration {
    #[default]
    FrFcfs,
    /// Any ready CPU request goes before every GPU request.
    FrFcfsCpuPrio,
}

#[derive(Clone, Debug)]
struct Slot {
    req: MemoryRequest,
    /// Times a younger request was issued while this one could have been.
    bypassed: u32,
}

/// Bounded per-channel request queue in arrival order.
#[derive(Clone, Debug)]
pub struct McQueue {
    slots: Vec<Slot>,
    capacity: usize,
    pub arbitration: Arbitration,
    /// Bypasses after which a ready request is forced; `None` is pure FR-FCFS.
    pub aging_cap: Option<u32>,
}

impl McQueue {
    pub fn new(capacity: usize, arbitration: Arbitration, aging_cap: Option<u32>) -> Self {
        McQueue {
            slots: Vec::with_capacity(capacity),
            capacity,
            arbitration,
            aging_cap,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() >= self.capacity
    }

    /// Hands the request back when the queue is full.
    pub fn try_push(&mut self, req: MemoryRequest) -> std::result::Result<(), MemoryRequest> {
        if self.is_full() {
            return Err(req);
        }
        debug_assert!(self.slots.last().is_none_or(|s| s.req.id < req.id));
        self.slots.push(Slot { req, bypassed: 0 });
        Ok(())
    }

    pub fn requests(&self) -> impl Iterator<Item = &MemoryRequest> {
        self.slots.iter().map(|s| &s.req)
    }
}

/// Index of the request to issue at `cycle`, if any bank it targets is ready.
///
/// Row hits first, then oldest. Under `FrFcfsCpuPrio` the CPU/GPU class is
/// compared before anything else. A request bypassed `aging_cap` times is
/// issued ahead of all others once its bank is ready.
pub fn mc_pick(queue: &McQueue, banks: &[BankState], cycle: u64) -> Option<usize> {
    let ready = |s: &Slot| banks[s.req.bank as usize].ready(cycle);
    if let Some(cap) = queue.aging_cap {
        if let Some(i) = queue.slots.iter().position(|s| ready(s) && s.bypassed >= cap) {
            return Some(i);
        }
    }
    let cpu_first = queue.arbitration == Arbitration::FrFcfsCpuPrio;
    queue
        .slots
        .iter()
        .enumerate()
        .filter(|(_, s)| ready(s))
        .min_by_key(|(_, s)| {
            let class = if cpu_first && !s.req.agent.is_cpu() { 1 } else { 0 };
            let miss = !banks[s.req.bank as usize].is_hit(s.req.row) as u8;
            (class, miss, s.req.id)
        })
        .map(|(i, _)| i)
}

/// One channel: its queue and banks.
#[derive(Clone, Debug)]
pub struct Channel {
    pub queue: McQueue,
    pub banks: Vec<BankState>,
}

impl Channel {
    pub fn new(banks: u32, queue: McQueue) -> Self {
        Channel {
            queue,
            banks: vec![BankState::default(); banks as usize],
        }
    }

    /// Issues at most one request this cycle and returns it with its issue
    /// and completion cycles filled in.
    pub fn tick(&mut self, timing: &TimingParams, cycle: u64) -> Result<Option<MemoryRequest>> {
        let Some(i) = mc_pick(&self.queue, &self.banks, cycle) else {
            return Ok(None);
        };
        let mut slot = self.queue.slots.remove(i);
        if self.queue.aging_cap.is_some() {
            for s in &mut self.queue.slots[..i] {
                if self.banks[s.req.bank as usize].ready(cycle) {
                    s.bypassed += 1;
                }
            }
        }
        let bank = &mut self.banks[slot.req.bank as usize];
        let svc = bank_advance(bank, slot.req.row, slot.req.is_read, timing, cycle).map_err(|e| match e {
            SimError::Invariant { cycle, msg } => SimError::Invariant {
                cycle,
                msg: format!("channel {} bank {}: {msg}", slot.req.channel, slot.req.bank),
            },
            e => e,
        })?;
        slot.req.t_issue = Some(cycle);
        slot.req.t_complete = Some(svc.complete);
        slot.req.row_hit = Some(svc.row_hit);
        Ok(Some(slot.req))
    }

    pub fn idle(&self, cycle: u64) -> bool {
        self.queue.is_empty() && self.banks.iter().all(|b| b.ready(cycle))
    }
}
