//! Per-SM warp scheduling with a throttled running set.
//!
//! `Ccws` keeps up to `capacity` warps running and swaps a warp out as soon
//! as it stalls on an L1 miss; pending warps are promoted first in, first
//! out. The `Tbas*` policies keep one thread batch running and swap whole
//! batches: `TbasC` takes the most recently queued eligible batch, `TbasD`
//! the sequential successor of the batch it just demoted, `TbasE` the oldest
//! eligible batch.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedPolicy {
    Ccws,
    TbasC,
    TbasD,
    TbasE,
}

impl SchedPolicy {
    pub fn is_tbas(&self) -> bool {
        !matches!(self, SchedPolicy::Ccws)
    }
}

/// When a non-vacant running set is re-examined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromotionCheck {
    #[default]
    OnStall,
    EveryCycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarpStatus {
    Ready,
    /// Waiting on at least one L1 miss.
    Stalled,
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WarpState {
    pub warp_id: usize,
    pub batch_id: u32,
    pub status: WarpStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedConfig {
    pub policy: SchedPolicy,
    /// Running-set size in warps under `Ccws`.
    pub ccws_capacity: usize,
    /// Ready warps a running batch needs to stay running.
    pub sufficient_threshold: usize,
    pub promotion_check: PromotionCheck,
}

impl Default for SchedConfig {
    fn default() -> Self {
        SchedConfig {
            policy: SchedPolicy::Ccws,
            ccws_capacity: 2,
            sufficient_threshold: 1,
            promotion_check: PromotionCheck::OnStall,
        }
    }
}

#[derive(Debug)]
pub struct Scheduler {
    cfg: SchedConfig,
    /// Resident warps. Ids grow monotonically, so id order is arrival order.
    warps: BTreeMap<usize, WarpState>,
    batch_warps: BTreeMap<u32, BTreeSet<usize>>,
    /// Batch -> (first dispatch cycle, dispatch ordinal) on this SM.
    batch_age: BTreeMap<u32, (u64, u64)>,
    arrivals: u64,

    running: BTreeSet<usize>,
    /// Warps in the order they entered the pending set.
    pending: VecDeque<usize>,

    running_batch: Option<u32>,
    /// Pending batches in the order they were queued.
    pending_batches: Vec<u32>,
    last_demoted: Option<u32>,

    last_issued: Option<usize>,
    promotions: u64,
}

impl Scheduler {
    pub fn new(cfg: SchedConfig) -> Self {
        Scheduler {
            cfg,
            warps: BTreeMap::new(),
            batch_warps: BTreeMap::new(),
            batch_age: BTreeMap::new(),
            arrivals: 0,
            running: BTreeSet::new(),
            pending: VecDeque::new(),
            running_batch: None,
            pending_batches: Vec::new(),
            last_demoted: None,
            last_issued: None,
            promotions: 0,
        }
    }

    pub fn policy(&self) -> SchedPolicy {
        self.cfg.policy
    }

    pub fn promotions(&self) -> u64 {
        self.promotions
    }

    pub fn warp(&self, w: usize) -> Option<&WarpState> {
        self.warps.get(&w)
    }

    pub fn batch_age(&self, batch: u32) -> Option<(u64, u64)> {
        self.batch_age.get(&batch).copied()
    }

    pub fn running_batch(&self) -> Option<u32> {
        self.running_batch
    }

    /// Warps currently allowed to issue.
    pub fn running_warps(&self) -> Vec<usize> {
        match self.cfg.policy {
            SchedPolicy::Ccws => self.running.iter().copied().collect(),
            _ => self
                .running_batch
                .and_then(|b| self.batch_warps.get(&b))
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default(),
        }
    }

    /// Registers the warps of a newly dispatched block.
    pub fn add_warps(&mut self, warps: &[usize], batch: u32, cycle: u64) {
        if !self.batch_age.contains_key(&batch) {
            self.batch_age.insert(batch, (cycle, self.arrivals));
            self.arrivals += 1;
        }
        let fresh = !self.batch_warps.contains_key(&batch);
        let set = self.batch_warps.entry(batch).or_default();
        for &w in warps {
            debug_assert!(!self.warps.contains_key(&w), "warp id reused");
            self.warps.insert(
                w,
                WarpState {
                    warp_id: w,
                    batch_id: batch,
                    status: WarpStatus::Ready,
                },
            );
            set.insert(w);
            self.pending.push_back(w);
        }
        if fresh && self.running_batch != Some(batch) {
            self.pending_batches.push(batch);
        }
    }

    /// Marks a warp finished and drops it from every set.
    pub fn finish(&mut self, w: usize) {
        let Some(st) = self.warps.remove(&w) else { return };
        self.running.remove(&w);
        self.pending.retain(|&p| p != w);
        let b = st.batch_id;
        if let Some(set) = self.batch_warps.get_mut(&b) {
            set.remove(&w);
            if set.is_empty() {
                self.batch_warps.remove(&b);
                self.pending_batches.retain(|&x| x != b);
                if self.running_batch == Some(b) {
                    self.running_batch = None;
                }
            }
        }
    }

    /// Data for a stalled warp came back.
    pub fn wake(&mut self, w: usize) {
        if let Some(st) = self.warps.get_mut(&w) {
            if st.status == WarpStatus::Stalled {
                st.status = WarpStatus::Ready;
            }
        }
    }

    fn ready_in_batch(&self, b: u32) -> usize {
        self.batch_warps
            .get(&b)
            .map(|s| s.iter().filter(|w| self.is_ready(**w)).count())
            .unwrap_or(0)
    }

    fn is_ready(&self, w: usize) -> bool {
        matches!(self.warps.get(&w), Some(s) if s.status == WarpStatus::Ready)
    }

    /// True iff the batch has at least `threshold` ready warps.
    pub fn sufficient_active(&self, batch: u32, threshold: usize) -> bool {
        self.ready_in_batch(batch) >= threshold
    }

    /// A warp issued a memory instruction that missed in L1.
    pub fn on_long_stall(&mut self, w: usize) {
        let Some(st) = self.warps.get_mut(&w) else { return };
        st.status = WarpStatus::Stalled;
        let batch = st.batch_id;
        match self.cfg.policy {
            SchedPolicy::Ccws => {
                if self.running.contains(&w) {
                    self.demote_and_promote_warp(w);
                }
            }
            _ => {
                if self.running_batch == Some(batch)
                    && !self.sufficient_active(batch, self.cfg.sufficient_threshold)
                {
                    self.demote_and_promote_batch(batch);
                }
            }
        }
    }

    fn demote_and_promote_warp(&mut self, w: usize) {
        self.running.remove(&w);
        self.pending.push_back(w);
        self.fill_warps();
    }

    fn fill_warps(&mut self) {
        while self.running.len() < self.cfg.ccws_capacity {
            let Some(i) = self.pending.iter().position(|&p| self.is_ready(p)) else {
                break;
            };
            let next = self.pending.remove(i).expect("index in range");
            self.running.insert(next);
            self.promotions += 1;
        }
    }

    fn demote_and_promote_batch(&mut self, batch: u32) {
        debug_assert_eq!(self.running_batch, Some(batch));
        self.running_batch = None;
        self.pending_batches.push(batch);
        self.last_demoted = Some(batch);
        self.promote_batch();
    }

    /// Picks the batch to run next: eligible batches first, then any batch
    /// with a ready warp so the SM never idles while work is ready.
    fn choose_batch(&self) -> Option<u32> {
        let threshold = self.cfg.sufficient_threshold;
        self.choose_batch_with(|b| self.sufficient_active(b, threshold))
            .or_else(|| self.choose_batch_with(|b| self.ready_in_batch(b) > 0))
    }

    fn choose_batch_with(&self, eligible: impl Fn(u32) -> bool) -> Option<u32> {
        let cands = self.pending_batches.iter().copied().filter(|&b| eligible(b));
        match self.cfg.policy {
            SchedPolicy::Ccws => None,
            // Nothing demoted yet: start from the first queued batch.
            SchedPolicy::TbasC if self.last_demoted.is_none() => cands.into_iter().next(),
            SchedPolicy::TbasC => cands.last(),
            SchedPolicy::TbasD => {
                let cands: BTreeSet<u32> = cands.collect();
                match self.last_demoted {
                    Some(d) => cands
                        .range(d + 1..)
                        .next()
                        .or_else(|| cands.iter().next())
                        .copied(),
                    None => cands.iter().next().copied(),
                }
            }
            SchedPolicy::TbasE => cands.min_by_key(|b| self.batch_age[b]),
        }
    }

    fn promote_batch(&mut self) {
        if let Some(b) = self.choose_batch() {
            if self.cfg.policy == SchedPolicy::TbasE {
                debug_assert!(self.oldest_eligible_is(b));
            }
            self.pending_batches.retain(|&x| x != b);
            self.running_batch = Some(b);
            self.promotions += 1;
        }
    }

    fn oldest_eligible_is(&self, b: u32) -> bool {
        let t = self.cfg.sufficient_threshold;
        let strict: Vec<u32> = self
            .pending_batches
            .iter()
            .copied()
            .filter(|&x| self.sufficient_active(x, t))
            .collect();
        let pool = if strict.is_empty() {
            self.pending_batches
                .iter()
                .copied()
                .filter(|&x| self.ready_in_batch(x) > 0)
                .collect()
        } else {
            strict
        };
        pool.iter().all(|x| self.batch_age[x] >= self.batch_age[&b])
    }

    /// Refills vacancies; under `EveryCycle` also re-judges the running batch.
    fn maintain(&mut self) {
        match self.cfg.policy {
            SchedPolicy::Ccws => self.fill_warps(),
            _ => {
                if let Some(b) = self.running_batch {
                    let t = self.cfg.sufficient_threshold;
                    let idle = self.ready_in_batch(b) == 0;
                    let recheck = self.cfg.promotion_check == PromotionCheck::EveryCycle;
                    let older_ready = recheck
                        && self.cfg.policy == SchedPolicy::TbasE
                        && self.pending_batches.iter().any(|x| {
                            self.batch_age[x] < self.batch_age[&b] && self.sufficient_active(*x, t)
                        });
                    let insufficient = recheck && !self.sufficient_active(b, t);
                    let other_ready = self.pending_batches.iter().any(|x| self.ready_in_batch(*x) > 0);
                    if (idle && other_ready) || older_ready || (insufficient && other_ready) {
                        self.demote_and_promote_batch(b);
                    }
                } else {
                    self.promote_batch();
                }
            }
        }
    }

    /// Next warp to issue this cycle: round robin over ready running warps.
    pub fn select_warp(&mut self, _cycle: u64) -> Option<usize> {
        self.maintain();
        let running = self.running_warps();
        let ready: Vec<usize> = running.into_iter().filter(|&w| self.is_ready(w)).collect();
        let pick = match self.last_issued {
            Some(last) => ready.iter().copied().find(|&w| w > last).or(ready.first().copied()),
            None => ready.first().copied(),
        }?;
        self.last_issued = Some(pick);
        Some(pick)
    }

    /// Every resident warp that could issue if it were running.
    pub fn any_ready(&self) -> bool {
        self.warps.values().any(|s| s.status == WarpStatus::Ready)
    }

    pub fn is_empty(&self) -> bool {
        self.warps.is_empty()
    }

    /// Running-set invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        match self.cfg.policy {
            SchedPolicy::Ccws => {
                if self.running.len() > self.cfg.ccws_capacity {
                    return Err(format!("running set holds {} warps", self.running.len()));
                }
            }
            _ => {
                let batches: BTreeSet<u32> = self
                    .running_warps()
                    .iter()
                    .map(|w| self.warps[w].batch_id)
                    .collect();
                if batches.len() > 1 {
                    return Err(format!("running set mixes batches {batches:?}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(policy: SchedPolicy) -> Scheduler {
        Scheduler::new(SchedConfig {
            policy,
            ..Default::default()
        })
    }

    /// Four single-block batches of two warps: warps 2b and 2b+1 in batch b.
    fn four_batches(policy: SchedPolicy) -> Scheduler {
        let mut s = sched(policy);
        for b in 0..4u32 {
            let w = (2 * b) as usize;
            s.add_warps(&[w, w + 1], b, 0);
        }
        s
    }

    #[test]
    fn skips_stalled_running_warp() {
        let mut s = four_batches(SchedPolicy::Ccws);
        assert_eq!(s.select_warp(0), Some(0));
        assert_eq!(s.running_warps(), vec![0, 1]);
        // w0 stalls; w2 replaces it, and w1 is the next ready warp.
        s.on_long_stall(0);
        assert_eq!(s.running_warps(), vec![1, 2]);
        assert_eq!(s.select_warp(1), Some(1));
    }

    #[test]
    fn finished_warps_leave_nothing_to_issue() {
        let mut s = sched(SchedPolicy::TbasE);
        s.add_warps(&[0, 1], 0, 0);
        s.finish(0);
        s.finish(1);
        assert_eq!(s.select_warp(0), None);
        assert!(s.is_empty());
    }

    #[test]
    fn ccws_demotes_in_arrival_order() {
        let mut s = four_batches(SchedPolicy::Ccws);
        s.select_warp(0);
        s.on_long_stall(0);
        assert_eq!(s.running_warps(), vec![1, 2]);
        s.on_long_stall(1);
        assert_eq!(s.running_warps(), vec![2, 3]);
        // w0 is ready again but queued behind w4..w7.
        s.wake(0);
        s.on_long_stall(2);
        assert_eq!(s.running_warps(), vec![3, 4]);
        for w in [3, 4, 5, 6, 7] {
            s.on_long_stall(w);
        }
        assert_eq!(s.running_warps(), vec![0]);
    }

    fn drain_batch(s: &mut Scheduler) -> u32 {
        let b = s.running_batch().unwrap();
        for w in s.running_warps() {
            s.on_long_stall(w);
        }
        b
    }

    #[test]
    fn tbas_d_promotes_successor() {
        let mut s = four_batches(SchedPolicy::TbasD);
        s.select_warp(0);
        assert_eq!(drain_batch(&mut s), 0);
        assert_eq!(s.running_batch(), Some(1));
        drain_batch(&mut s);
        drain_batch(&mut s);
        assert_eq!(s.running_batch(), Some(3));
        // Batch 0 is back; the successor of 3 wraps to it.
        s.wake(0);
        s.wake(1);
        drain_batch(&mut s);
        assert_eq!(s.running_batch(), Some(0));
    }

    #[test]
    fn tbas_c_takes_latest_queued() {
        let mut s = four_batches(SchedPolicy::TbasC);
        s.select_warp(0);
        drain_batch(&mut s);
        assert_eq!(s.running_batch(), Some(3));
    }

    #[test]
    fn tbas_e_prefers_oldest() {
        let mut s = sched(SchedPolicy::TbasE);
        s.add_warps(&[0], 0, 0);
        s.add_warps(&[1], 1, 5);
        s.add_warps(&[2], 2, 10);
        s.select_warp(0);
        assert_eq!(s.running_batch(), Some(0));
        drain_batch(&mut s);
        assert_eq!(s.running_batch(), Some(1));
        s.wake(0);
        drain_batch(&mut s);
        // Batch 0 (age 0) beats batch 2 (age 10).
        assert_eq!(s.running_batch(), Some(0));
    }

    #[test]
    fn sufficient_active_threshold() {
        let mut s = sched(SchedPolicy::TbasE);
        s.add_warps(&[0, 1], 0, 0);
        s.warps.get_mut(&0).unwrap().status = WarpStatus::Stalled;
        s.warps.get_mut(&1).unwrap().status = WarpStatus::Stalled;
        assert!(!s.sufficient_active(0, 1));
        s.wake(1);
        assert!(s.sufficient_active(0, 1));
        assert!(!s.sufficient_active(0, 2));
    }

    #[test]
    fn running_set_never_mixes_batches() {
        for policy in [SchedPolicy::TbasC, SchedPolicy::TbasD, SchedPolicy::TbasE] {
            let mut s = four_batches(policy);
            for cycle in 0..40u64 {
                if let Some(w) = s.select_warp(cycle) {
                    if cycle % 3 != 0 {
                        s.on_long_stall(w);
                    }
                }
                if cycle % 5 == 0 {
                    for w in 0..8 {
                        s.wake(w);
                    }
                }
                s.check_invariants().unwrap();
            }
        }
    }

    #[test]
    fn never_idles_with_ready_work() {
        for policy in [SchedPolicy::Ccws, SchedPolicy::TbasC, SchedPolicy::TbasD, SchedPolicy::TbasE] {
            let mut s = Scheduler::new(SchedConfig {
                policy,
                sufficient_threshold: 2,
                ..Default::default()
            });
            s.add_warps(&[0, 1], 0, 0);
            s.add_warps(&[2, 3], 1, 0);
            s.select_warp(0);
            // Leave only one ready warp, in batch 1: below threshold everywhere.
            s.on_long_stall(0);
            s.on_long_stall(1);
            s.on_long_stall(2);
            assert!(s.any_ready());
            assert_eq!(s.select_warp(1), Some(3), "{policy:?}");
        }
    }
}
