use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::l1::L1Cache;
use super::report::{peak_window, MetricsReport, REPORT_SCHEMA_VERSION};
use crate::batching::{block_pages, form_batches, plan_kernel, BatchPlan};
use crate::dispatch::{partition_blocks, DispatchKind, DispatchQueue, InterleavedDispatcher};
use crate::dram::{
    compute_metrics, energy_total, Agent, BankCounterRow, BankCounters, Channel, EnergyBreakdown, McQueue,
    MemoryRequest,
};
use crate::error::{Result, SimError};
use crate::memmap::{Locality, Owner, PageTable, Pool};
use crate::sched::Scheduler;
use crate::workload::{enumerate_blocks, gen_block_trace, BlockId, CpuTrafficGen, KernelSpec, WorkloadFile};

use super::config::PoolConfig;

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Keep the per-cycle issue log.
    pub trace_issue: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub cycle: u64,
    pub sm: usize,
    pub block_x: u32,
    pub block_y: u32,
    pub batch: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub cycle: u64,
    pub sm: usize,
    pub warp: usize,
    pub batch: u32,
    pub memory: bool,
    pub lines: u32,
    pub misses: u32,
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub plan: BatchPlan,
    /// Completed DRAM requests in completion order.
    pub log: Vec<MemoryRequest>,
    pub bank_counters: Vec<BankCounterRow>,
    pub dispatch_log: Vec<DispatchRecord>,
    pub issue_log: Vec<IssueRecord>,
    pub page_table: PageTable,
}

type Line = (u64, bool);

#[derive(Debug)]
struct Warp {
    block: usize,
    batch: u32,
    /// Distinct cache lines per memory instruction, by virtual line address.
    instrs: Vec<Vec<Line>>,
    pc: usize,
    outstanding: u32,
}

#[derive(Debug)]
struct Block {
    live_warps: usize,
    threads: u32,
}

struct PendingReq {
    ready_at: u64,
    req: MemoryRequest,
}

#[derive(Debug)]
struct Reply {
    line: u64,
    t_complete: u64,
    ready_at: u64,
}

struct Sm {
    id: usize,
    sched: Scheduler,
    l1: L1Cache,
    /// Line -> warps waiting on it, one entry per missing instruction.
    mshr: BTreeMap<u64, Vec<usize>>,
    outbound: VecDeque<PendingReq>,
    reply_waiting: VecDeque<Reply>,
    reply_queue: VecDeque<Reply>,
    warps: BTreeMap<usize, Warp>,
    blocks: BTreeMap<usize, Block>,
    threads_used: u32,
}

struct PoolState {
    pool: Pool,
    cfg: PoolConfig,
    channels: Vec<Channel>,
}

#[derive(Default)]
struct Counters {
    created: u64,
    completed: u64,
    gpu_inflight: u64,
    instructions: u64,
    l1_hits: u64,
    l1_misses: u64,
    local: u64,
    remote: u64,
    reply_stalls: u64,
    backpressure: u64,
    mc_rejections: u64,
}

/// Single-threaded cycle loop. Build with [`Simulator::new`], advance with
/// [`Simulator::step`], collect with [`Simulator::finish`].
pub struct Simulator {
    cfg: RunConfig,
    opts: RunOptions,
    spec: KernelSpec,
    plan: BatchPlan,
    batch_of: Vec<u32>,
    order: Vec<BlockId>,
    serial: Vec<DispatchQueue>,
    interleaved: Option<InterleavedDispatcher>,
    sms: Vec<Sm>,
    pools: Vec<PoolState>,
    pt: PageTable,
    in_service: BTreeMap<(u64, u64), MemoryRequest>,
    cpu_gen: Option<CpuTrafficGen>,
    cpu_pending: VecDeque<MemoryRequest>,
    cpu_intensive: bool,
    next_req_id: u64,
    next_warp: usize,
    next_block: usize,
    cycle: u64,
    c: Counters,
    log: Vec<MemoryRequest>,
    dispatch_log: Vec<DispatchRecord>,
    issue_log: Vec<IssueRecord>,
}

fn pool_index(p: Pool) -> usize {
    match p {
        Pool::Gddr => 0,
        Pool::Ddr => 1,
    }
}

fn line_key(pool: Pool, phys_line: u64) -> u64 {
    ((pool_index(pool) as u64) << 62) | phys_line
}

fn build_plan(cfg: &RunConfig, spec: &KernelSpec, page_size: u64) -> Result<BatchPlan> {
    if let Some(path) = &cfg.batching.plan_file {
        let plan = BatchPlan::load(path)?;
        if plan.page_size != page_size || plan.total_blocks() != spec.total_blocks() as usize {
            return Err(SimError::invalid(
                "batching",
                format!("plan {} does not match the kernel or page size", path.display()),
            ));
        }
        return Ok(plan);
    }
    if let Some(s) = cfg.batching.stride {
        return form_batches(spec, s, page_size);
    }
    match plan_kernel(spec, page_size, &cfg.batching.profile) {
        Err(SimError::NoAccesses) => form_batches(spec, 1, page_size),
        r => r,
    }
}

impl Simulator {
    pub fn new(cfg: &RunConfig, opts: RunOptions) -> Result<Self> {
        cfg.validate()?;
        let wl = cfg.load_workload()?;
        Self::with_workload(cfg, wl, opts)
    }

    pub fn with_workload(cfg: &RunConfig, wl: WorkloadFile, opts: RunOptions) -> Result<Self> {
        cfg.validate()?;
        wl.validate()?;
        let spec = wl.kernel;
        let hw = &cfg.hardware;
        let page_size = cfg.gddr.layout.page_size();
        if spec.threads_per_block() > hw.max_threads_per_sm {
            return Err(SimError::invalid(
                "hardware",
                format!(
                    "a block of {} threads exceeds max_threads_per_sm {}",
                    spec.threads_per_block(),
                    hw.max_threads_per_sm
                ),
            ));
        }
        let plan = build_plan(cfg, &spec, page_size)?;
        let batch_of = plan.batch_lookup(&spec);
        let total = spec.total_blocks() as usize;

        let mut pt = PageTable::new(
            cfg.allocator,
            cfg.gddr.layout,
            cfg.ddr.map(|d| d.layout),
            hw.num_sms,
            cfg.placement,
        )?;

        let (order, serial, interleaved) = match cfg.dispatch {
            DispatchKind::Serial => {
                let order = plan.dispatch_order();
                let queues = partition_blocks(total, hw.num_sms, &plan);
                if cfg.allocator.is_coloring() {
                    for q in &queues {
                        for &b in &order[q.head..q.tail] {
                            pt.reserve(q.sm_id, block_pages(&spec, b, page_size)?);
                        }
                    }
                }
                (order, queues, None)
            }
            DispatchKind::Interleaved => {
                let seed = cfg.interleaved_shuffle.then_some(cfg.seed);
                (enumerate_blocks(&spec), Vec::new(), Some(InterleavedDispatcher::new(total, seed)))
            }
        };

        let sms = (0..hw.num_sms)
            .map(|id| Sm {
                id,
                sched: Scheduler::new(cfg.scheduler),
                l1: L1Cache::new(hw.l1.sets, hw.l1.ways),
                mshr: BTreeMap::new(),
                outbound: VecDeque::new(),
                reply_waiting: VecDeque::new(),
                reply_queue: VecDeque::new(),
                warps: BTreeMap::new(),
                blocks: BTreeMap::new(),
                threads_used: 0,
            })
            .collect();

        let mut pools = Vec::new();
        for (pool, pc) in [(Pool::Gddr, Some(cfg.gddr)), (Pool::Ddr, cfg.ddr)] {
            let Some(pc) = pc else { continue };
            let channels = (0..pc.layout.channels())
                .map(|_| {
                    Channel::new(
                        pc.layout.banks(),
                        McQueue::new(pc.queue_capacity, cfg.arbitration, cfg.aging_cap),
                    )
                })
                .collect();
            pools.push(PoolState { pool, cfg: pc, channels });
        }

        let cpu = if cfg.disable_cpu { None } else { wl.cpu_traffic };
        let cpu_intensive = cpu
            .as_ref()
            .is_some_and(|c| c.request_rate > cfg.cpu_intensity_threshold);
        let cpu_gen = match cpu {
            Some(mut c) => {
                c.validate()?;
                c.seed ^= cfg.seed;
                Some(CpuTrafficGen::new(&c))
            }
            None => None,
        };

        Ok(Simulator {
            cfg: cfg.clone(),
            opts,
            spec,
            plan,
            batch_of,
            order,
            serial,
            interleaved,
            sms,
            pools,
            pt,
            in_service: BTreeMap::new(),
            cpu_gen,
            cpu_pending: VecDeque::new(),
            cpu_intensive,
            next_req_id: 0,
            next_warp: 0,
            next_block: 0,
            cycle: 0,
            c: Counters::default(),
            log: Vec::new(),
            dispatch_log: Vec::new(),
            issue_log: Vec::new(),
        })
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    /// All blocks retired and every GPU request answered.
    pub fn gpu_done(&self) -> bool {
        let dispatched = match &self.interleaved {
            Some(d) => d.remaining() == 0,
            None => self.serial.iter().all(|q| q.is_empty()),
        };
        dispatched && self.sms.iter().all(|s| s.blocks.is_empty()) && self.c.gpu_inflight == 0
    }

    fn can_accept(&self, sm: usize) -> bool {
        let s = &self.sms[sm];
        s.blocks.len() < self.cfg.hardware.max_blocks_per_sm
            && s.threads_used + self.spec.threads_per_block() <= self.cfg.hardware.max_threads_per_sm
    }

    fn launch(&mut self, sm: usize, ordinal: usize) -> Result<()> {
        let block = self.order[ordinal];
        let batch = self.batch_of[self.spec.block_linear(block) as usize];
        let line_bytes = self.cfg.hardware.l1.line_bytes;
        let key = self.next_block;
        self.next_block += 1;
        let traces = gen_block_trace(&self.spec, block)?;
        let mut ids = Vec::with_capacity(traces.len());
        let mut live = 0;
        for t in &traces {
            let instrs: Vec<Vec<Line>> = t
                .instructions()
                .map(|ins| {
                    let mut lines: Vec<Line> = ins
                        .iter()
                        .map(|e| (e.virtual_addr / line_bytes * line_bytes, e.is_read))
                        .collect();
                    lines.dedup();
                    lines.sort_unstable();
                    lines.dedup();
                    lines
                })
                .collect();
            if instrs.is_empty() {
                continue;
            }
            let w = self.next_warp;
            self.next_warp += 1;
            ids.push(w);
            live += 1;
            self.sms[sm].warps.insert(
                w,
                Warp {
                    block: key,
                    batch,
                    instrs,
                    pc: 0,
                    outstanding: 0,
                },
            );
        }
        let threads = self.spec.threads_per_block();
        let s = &mut self.sms[sm];
        if live > 0 {
            s.blocks.insert(key, Block { live_warps: live, threads });
            s.threads_used += threads;
            s.sched.add_warps(&ids, batch, self.cycle);
        }
        self.dispatch_log.push(DispatchRecord {
            cycle: self.cycle,
            sm,
            block_x: block.x,
            block_y: block.y,
            batch,
        });
        Ok(())
    }

    fn phase_dispatch(&mut self) -> Result<()> {
        let idle: Vec<usize> = (0..self.sms.len()).filter(|&s| self.can_accept(s)).collect();
        if let Some(d) = &mut self.interleaved {
            for (sm, ordinal) in d.dispatch_round(&idle) {
                self.launch(sm, ordinal)?;
            }
        } else {
            for sm in idle {
                if let Some(ordinal) = self.serial[sm].next_block() {
                    self.launch(sm, ordinal)?;
                }
            }
        }
        Ok(())
    }

    fn ops_of(&self, w: &Warp) -> usize {
        let n = w.instrs.len();
        n + self.spec.compute_gap as usize * n.saturating_sub(1)
    }

    fn finish_warp(&mut self, sm: usize, w: usize) {
        let s = &mut self.sms[sm];
        let warp = s.warps.remove(&w).expect("resident warp");
        s.sched.finish(w);
        let b = s.blocks.get_mut(&warp.block).expect("resident block");
        b.live_warps -= 1;
        if b.live_warps == 0 {
            let threads = b.threads;
            s.blocks.remove(&warp.block);
            s.threads_used -= threads;
        }
    }

    fn make_request(&mut self, sm: usize, w: usize, batch: u32, vline: u64, is_read: bool) -> Result<(u64, MemoryRequest)> {
        let (e, phys) = self.pt.translate(vline, Owner::Gpu(sm))?;
        let c = self.pt.layout(e.pool).decompose(phys)?;
        let req = MemoryRequest {
            id: 0,
            pool: e.pool,
            channel: c.channel,
            bank: c.bank,
            row: c.row,
            column: c.column,
            is_read,
            agent: Agent::Gpu { sm, warp: w, batch },
            line_addr: phys,
            t_enqueue: 0,
            t_issue: None,
            t_complete: None,
            row_hit: None,
        };
        Ok((line_key(e.pool, phys), req))
    }

    fn issue_one(&mut self, sm: usize) -> Result<()> {
        let cycle = self.cycle;
        let Some(w) = self.sms[sm].sched.select_warp(cycle) else {
            return Ok(());
        };
        let (pc, total, batch) = {
            let warp = &self.sms[sm].warps[&w];
            (warp.pc, self.ops_of(warp), warp.batch)
        };
        let period = self.spec.compute_gap as usize + 1;
        let mut rec = IssueRecord {
            cycle,
            sm,
            warp: w,
            batch,
            memory: pc % period == 0,
            lines: 0,
            misses: 0,
        };
        if rec.memory {
            let lines = self.sms[sm].warps[&w].instrs[pc / period].clone();
            let mut reqs = Vec::with_capacity(lines.len());
            for &(vline, is_read) in &lines {
                reqs.push(self.make_request(sm, w, batch, vline, is_read)?);
            }
            let hw = self.cfg.hardware;
            let s = &self.sms[sm];
            let new_misses = reqs
                .iter()
                .filter(|(k, r)| r.is_read && !s.l1.contains(*k) && !s.mshr.contains_key(k))
                .count();
            let writes = reqs.iter().filter(|(_, r)| !r.is_read).count();
            if s.mshr.len() + new_misses > hw.l1.mshr_entries
                || s.outbound.len() + new_misses + writes > self.cfg.interconnect.request_buffer
            {
                self.c.backpressure += 1;
                return Ok(());
            }
            let ready_at = cycle + self.cfg.interconnect.request_latency;
            let s = &mut self.sms[sm];
            let mut outstanding = 0;
            for (key, req) in reqs {
                rec.lines += 1;
                let send = if req.is_read {
                    if s.l1.access(key) {
                        self.c.l1_hits += 1;
                        false
                    } else {
                        self.c.l1_misses += 1;
                        rec.misses += 1;
                        outstanding += 1;
                        let waiters = s.mshr.entry(key).or_default();
                        waiters.push(w);
                        waiters.len() == 1
                    }
                } else {
                    s.l1.access(key);
                    true
                };
                if send {
                    match self.pt.classify_access(sm, req.pool, req.channel, req.bank) {
                        Locality::Local => self.c.local += 1,
                        Locality::Remote => self.c.remote += 1,
                    }
                    s.outbound.push_back(PendingReq { ready_at, req });
                    self.c.created += 1;
                    self.c.gpu_inflight += 1;
                }
            }
            let warp = s.warps.get_mut(&w).expect("resident warp");
            warp.pc += 1;
            warp.outstanding = outstanding;
            if outstanding > 0 {
                s.sched.on_long_stall(w);
            }
        } else {
            self.sms[sm].warps.get_mut(&w).expect("resident warp").pc += 1;
        }
        self.c.instructions += 1;
        if self.opts.trace_issue {
            self.issue_log.push(rec);
        }
        let warp = &self.sms[sm].warps[&w];
        if warp.pc == total && warp.outstanding == 0 {
            self.finish_warp(sm, w);
        }
        Ok(())
    }

    fn phase_issue(&mut self) -> Result<()> {
        for sm in 0..self.sms.len() {
            self.issue_one(sm)?;
        }
        Ok(())
    }

    fn try_enqueue(&mut self, mut req: MemoryRequest) -> std::result::Result<(), MemoryRequest> {
        let cycle = self.cycle;
        let id = self.next_req_id;
        req.id = id;
        req.t_enqueue = cycle;
        let pool = &mut self.pools[pool_index(req.pool)];
        match pool.channels[req.channel as usize].queue.try_push(req) {
            Ok(()) => {
                self.next_req_id += 1;
                Ok(())
            }
            Err(r) => Err(r),
        }
    }

    fn phase_enqueue(&mut self) -> Result<()> {
        let cycle = self.cycle;
        let n = self.sms.len();
        for k in 0..n {
            let sm = (cycle as usize + k) % n;
            while let Some(p) = self.sms[sm].outbound.front() {
                if p.ready_at > cycle {
                    break;
                }
                let req = p.req;
                if self.try_enqueue(req).is_err() {
                    self.c.mc_rejections += 1;
                    break;
                }
                self.sms[sm].outbound.pop_front();
            }
        }
        if let Some(g) = &mut self.cpu_gen {
            if let Some(r) = g.step(cycle) {
                let (e, phys) = self.pt.translate(r.virtual_addr, Owner::Cpu)?;
                let c = self.pt.layout(e.pool).decompose(phys)?;
                self.cpu_pending.push_back(MemoryRequest {
                    id: 0,
                    pool: e.pool,
                    channel: c.channel,
                    bank: c.bank,
                    row: c.row,
                    column: c.column,
                    is_read: r.is_read,
                    agent: Agent::Cpu,
                    line_addr: phys,
                    t_enqueue: 0,
                    t_issue: None,
                    t_complete: None,
                    row_hit: None,
                });
                self.c.created += 1;
            }
        }
        while let Some(&req) = self.cpu_pending.front() {
            if self.try_enqueue(req).is_err() {
                self.c.mc_rejections += 1;
                break;
            }
            self.cpu_pending.pop_front();
        }
        Ok(())
    }

    fn check_rows(&self, r: &MemoryRequest) -> Result<()> {
        if let (Some(region), Pool::Gddr) = (self.pt.region(), r.pool) {
            let ok = match r.agent {
                Agent::Cpu => region.cpu_rows.contains(&r.row),
                Agent::Gpu { .. } => region.gpu_rows.contains(&r.row),
            };
            if !ok {
                return Err(SimError::Invariant {
                    cycle: self.cycle,
                    msg: format!("request {} from {:?} addresses row {} outside its region", r.id, r.agent, r.row),
                });
            }
        }
        Ok(())
    }

    fn phase_memory(&mut self) -> Result<()> {
        let cycle = self.cycle;
        let mut issued = Vec::new();
        for p in &mut self.pools {
            let timing = p.cfg.timing;
            for ch in &mut p.channels {
                if let Some(r) = ch.tick(&timing, cycle)? {
                    issued.push(r);
                }
            }
        }
        for r in issued {
            self.check_rows(&r)?;
            let done = r.t_complete.expect("issued request has a completion cycle");
            self.in_service.insert((done, r.id), r);
        }
        Ok(())
    }

    fn deliver(&mut self, sm: usize, reply: Reply) -> Result<()> {
        let cycle = self.cycle;
        if cycle < reply.t_complete {
            return Err(SimError::Invariant {
                cycle,
                msg: format!("reply delivered before bank completion at {}", reply.t_complete),
            });
        }
        self.c.gpu_inflight -= 1;
        let s = &mut self.sms[sm];
        s.l1.fill(reply.line);
        let waiters = s.mshr.remove(&reply.line).unwrap_or_default();
        for w in waiters {
            let warp = self.sms[sm].warps.get_mut(&w).expect("waiting warp is resident");
            warp.outstanding -= 1;
            if warp.outstanding > 0 {
                continue;
            }
            let warp = &self.sms[sm].warps[&w];
            if warp.pc == self.ops_of(warp) {
                self.finish_warp(sm, w);
            } else {
                self.sms[sm].sched.wake(w);
            }
        }
        Ok(())
    }

    fn phase_replies(&mut self) -> Result<()> {
        let cycle = self.cycle;
        while let Some((&(done, id), _)) = self.in_service.first_key_value() {
            if done > cycle {
                break;
            }
            let r = self.in_service.remove(&(done, id)).expect("present");
            self.c.completed += 1;
            match r.agent {
                Agent::Gpu { sm, .. } if r.is_read => self.sms[sm].reply_waiting.push_back(Reply {
                    line: line_key(r.pool, r.line_addr),
                    t_complete: done,
                    ready_at: 0,
                }),
                Agent::Gpu { .. } => self.c.gpu_inflight -= 1,
                Agent::Cpu => {}
            }
            self.log.push(r);
        }
        let ic = self.cfg.interconnect;
        for sm in 0..self.sms.len() {
            let s = &mut self.sms[sm];
            while let Some(mut r) = s.reply_waiting.pop_front() {
                if ic.reply_queue_capacity.is_some_and(|c| s.reply_queue.len() >= c) {
                    s.reply_waiting.push_front(r);
                    break;
                }
                r.ready_at = cycle + ic.reply_latency;
                s.reply_queue.push_back(r);
            }
            self.c.reply_stalls += s.reply_waiting.len() as u64;
            let mut drained = 0;
            while ic.reply_drain_per_cycle.is_none_or(|d| drained < d) {
                match self.sms[sm].reply_queue.front() {
                    Some(r) if r.ready_at <= cycle => {
                        let r = self.sms[sm].reply_queue.pop_front().expect("front");
                        self.deliver(sm, r)?;
                        drained += 1;
                    }
                    _ => break,
                }
            }
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<()> {
        let cycle = self.cycle;
        for s in &self.sms {
            s.sched.check_invariants().map_err(|msg| SimError::Invariant {
                cycle,
                msg: format!("SM {}: {msg}", s.id),
            })?;
        }
        let outbound: usize = self.sms.iter().map(|s| s.outbound.len()).sum();
        let queued: usize = self
            .pools
            .iter()
            .flat_map(|p| p.channels.iter())
            .map(|c| c.queue.len())
            .sum();
        let accounted = self.c.completed
            + self.in_service.len() as u64
            + queued as u64
            + outbound as u64
            + self.cpu_pending.len() as u64;
        if accounted != self.c.created {
            return Err(SimError::Invariant {
                cycle,
                msg: format!("{} requests created, {accounted} accounted for", self.c.created),
            });
        }
        for p in &self.pools {
            for c in &p.channels {
                if c.queue.len() > p.cfg.queue_capacity {
                    return Err(SimError::Invariant {
                        cycle,
                        msg: "controller queue over capacity".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Advances one cycle through the fixed phase order.
    pub fn step(&mut self) -> Result<()> {
        self.phase_dispatch()?;
        self.phase_issue()?;
        self.phase_enqueue()?;
        self.phase_memory()?;
        self.phase_replies()?;
        self.check_invariants()?;
        self.cycle += 1;
        Ok(())
    }

    /// Steps until the kernel finishes or the horizon is reached.
    pub fn run_to_end(&mut self) -> Result<bool> {
        while !self.gpu_done() {
            if self.cycle >= self.cfg.horizon {
                return Ok(true);
            }
            self.step()?;
        }
        Ok(false)
    }

    pub fn bank_counters(&self) -> Vec<BankCounterRow> {
        let mut rows = Vec::new();
        for p in &self.pools {
            for (ch, c) in p.channels.iter().enumerate() {
                for (b, bank) in c.banks.iter().enumerate() {
                    let k = bank.counters;
                    rows.push(BankCounterRow {
                        pool: p.pool,
                        channel: ch as u32,
                        bank: b as u32,
                        activates: k.activates,
                        reads: k.reads,
                        writes: k.writes,
                        row_hits: k.row_hits,
                        row_switches: k.row_switches,
                    });
                }
            }
        }
        rows
    }

    pub fn finish(self, truncated: bool) -> Result<RunOutput> {
        let m = compute_metrics(&self.log)?;
        let cycles = self.cycle;
        let mut energy = EnergyBreakdown::default();
        let mut totals = BankCounters::default();
        for p in &self.pools {
            let mut pc = BankCounters::default();
            for c in &p.channels {
                for b in &c.banks {
                    pc.add(&b.counters);
                }
            }
            let banks = (p.cfg.layout.channels() * p.cfg.layout.banks()) as u64;
            energy.add(&energy_total(&pc, &p.cfg.energy, banks, cycles));
            totals.add(&pc);
        }
        // Bank counters also include requests whose completion lies past the
        // final cycle; the log only holds completed ones.
        let mut gpu_enq: Vec<u64> = self
            .log
            .iter()
            .filter(|r| !r.agent.is_cpu())
            .map(|r| r.t_enqueue)
            .collect();
        let dram = self.c.local + self.c.remote;
        let report = MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            kernel: self.spec.name.clone(),
            cycles,
            truncated,
            degenerate: m.degenerate,
            stride: self.plan.stride,
            formation: Some(self.plan.formation),
            warp_instructions: self.c.instructions,
            ipc: if cycles == 0 { 0.0 } else { self.c.instructions as f64 / cycles as f64 },
            blp: m.blp,
            rbhr: m.rbhr,
            gpu_rbhr: m.gpu.rbhr,
            cpu_rbhr: m.cpu.rbhr,
            local_accesses: self.c.local,
            remote_accesses: self.c.remote,
            local_ratio: if dram == 0 { 0.0 } else { self.c.local as f64 / dram as f64 },
            mean_access_delay: m.mean_delay,
            gpu_mean_latency: m.gpu.mean_latency,
            cpu_mean_latency: m.cpu.mean_latency,
            gpu_requests: m.gpu.accesses,
            cpu_requests: m.cpu.accesses,
            cpu_intensive: self.cpu_intensive,
            reply_stalls: self.c.reply_stalls,
            backpressure_stalls: self.c.backpressure,
            mc_queue_rejections: self.c.mc_rejections,
            reads: totals.reads,
            writes: totals.writes,
            activates: totals.activates,
            row_hits: totals.row_hits,
            row_switches: totals.row_switches,
            peak_burst_100: peak_window(&mut gpu_enq, 100),
            energy,
            spilled_pages: self.pt.spilled_pages().len() as u64,
            l1_hits: self.c.l1_hits,
            l1_misses: self.c.l1_misses,
            mpki_proxy: if self.c.instructions == 0 {
                0.0
            } else {
                self.c.l1_misses as f64 * 1000.0 / self.c.instructions as f64
            },
        };
        let bank_counters = self.bank_counters();
        Ok(RunOutput {
            report,
            plan: self.plan,
            log: self.log,
            bank_counters,
            dispatch_log: self.dispatch_log,
            issue_log: self.issue_log,
            page_table: self.pt,
        })
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    run_with(cfg, RunOptions::default())
}

pub fn run_with(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutput> {
    let mut sim = Simulator::new(cfg, opts)?;
    let truncated = sim.run_to_end()?;
    sim.finish(truncated)
}
