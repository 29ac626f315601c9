//! Thread block dispatch: the interleaved baseline that hands the next block
//! id to whichever SM frees a slot, and serial dispatch from per-SM
//! head/tail queues filled before launch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batching::BatchPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DispatchKind {
    Interleaved,
    Serial,
}

/// Per-SM dispatch queue: two registers over the plan's dispatch order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchQueue {
    pub sm_id: usize,
    pub head: usize,
    pub tail: usize,
}

impl DispatchQueue {
    /// Pops the head ordinal; `None` once head meets tail.
    pub fn next_block(&mut self) -> Option<usize> {
        if self.head >= self.tail {
            return None;
        }
        let b = self.head;
        self.head += 1;
        Some(b)
    }

    pub fn remaining(&self) -> usize {
        self.tail - self.head
    }

    pub fn is_empty(&self) -> bool {
        self.head >= self.tail
    }
}

/// Dispatch units in order: whole batches, except that a batch larger than
/// an even per-SM share is cut into share-sized chunks.
fn dispatch_units(plan: &BatchPlan, num_sms: usize) -> Vec<usize> {
    let total = plan.total_blocks();
    let share = total.div_ceil(num_sms).max(1);
    let mut units = Vec::with_capacity(plan.batches.len());
    for b in &plan.batches {
        let mut n = b.block_ids.len();
        while n > share {
            units.push(share);
            n -= share;
        }
        if n > 0 {
            units.push(n);
        }
    }
    units
}

/// Can `units` be cut into at most `parts` contiguous runs each `<= cap`?
fn fits(units: &[usize], parts: usize, cap: usize) -> bool {
    let mut used = 0;
    let mut load = 0;
    for &u in units {
        if u > cap {
            return false;
        }
        if load + u > cap || used == 0 {
            used += 1;
            load = 0;
        }
        load += u;
    }
    used <= parts
}

fn min_max_load(units: &[usize], parts: usize) -> usize {
    let (mut lo, mut hi) = (
        units.iter().copied().max().unwrap_or(0),
        units.iter().sum::<usize>(),
    );
    while lo < hi {
        let mid = (lo + hi) / 2;
        if fits(units, parts, mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Contiguous per-SM `[head, tail)` ranges over the plan's dispatch order.
///
/// The largest per-SM load is the minimum achievable without splitting a
/// batch; within that bound each SM takes the batches that bring it closest
/// to an even share of what is left.
pub fn partition_blocks(total_blocks: usize, num_sms: usize, plan: &BatchPlan) -> Vec<DispatchQueue> {
    assert!(num_sms >= 1, "num_sms must be >= 1");
    debug_assert_eq!(total_blocks, plan.total_blocks());
    let units = dispatch_units(plan, num_sms);
    let cap = min_max_load(&units, num_sms);

    let mut queues = Vec::with_capacity(num_sms);
    let mut next_unit = 0;
    let mut ordinal = 0;
    for sm in 0..num_sms {
        let left_sms = num_sms - sm;
        let rest = &units[next_unit..];
        let take = if left_sms == 1 {
            rest.len()
        } else {
            let target = rest.iter().sum::<usize>() as f64 / left_sms as f64;
            let mut take = 0;
            let mut load = 0;
            while take < rest.len()
                && load + rest[take] <= cap
                && (load as f64 + rest[take] as f64 / 2.0) <= target
            {
                load += rest[take];
                take += 1;
            }
            while !fits(&rest[take..], left_sms - 1, cap) {
                take += 1;
            }
            take
        };
        let blocks: usize = rest[..take].iter().sum();
        queues.push(DispatchQueue {
            sm_id: sm,
            head: ordinal,
            tail: ordinal + blocks,
        });
        ordinal += blocks;
        next_unit += take;
    }
    queues
}

/// Baseline dispatcher: one global sequential counter.
#[derive(Debug)]
pub struct InterleavedDispatcher {
    next: usize,
    total: usize,
    rng: Option<ChaCha8Rng>,
}

impl InterleavedDispatcher {
    /// `seed` switches from lowest-SM-first tie breaking to a seeded
    /// shuffle of the idle SMs each round.
    pub fn new(total: usize, seed: Option<u64>) -> Self {
        InterleavedDispatcher {
            next: 0,
            total,
            rng: seed.map(ChaCha8Rng::seed_from_u64),
        }
    }

    pub fn remaining(&self) -> usize {
        self.total - self.next
    }

    /// Hands one block ordinal to each SM in `idle` (SMs reporting a free
    /// slot this cycle, ascending id) until blocks run out.
    pub fn dispatch_round(&mut self, idle: &[usize]) -> Vec<(usize, usize)> {
        let mut order = idle.to_vec();
        if let Some(rng) = &mut self.rng {
            order.shuffle(rng);
        }
        let mut out = Vec::new();
        for sm in order {
            if self.next >= self.total {
                break;
            }
            out.push((sm, self.next));
            self.next += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batching::{Formation, ThreadBatch};
    use crate::workload::BlockId;
    use proptest::prelude::*;

    fn plan_of(sizes: &[usize]) -> BatchPlan {
        let mut next = 0u32;
        let batches = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let ids = (next..next + n as u32).map(|x| BlockId::new(x, 0)).collect();
                next += n as u32;
                ThreadBatch {
                    batch_id: i as u32,
                    block_ids: ids,
                    page_set: Default::default(),
                }
            })
            .collect();
        BatchPlan {
            stride: sizes.first().copied().unwrap_or(1) as u32,
            formation: Formation::FixedStride,
            batches,
            page_size: 4096,
        }
    }

    fn ranges(q: &[DispatchQueue]) -> Vec<(usize, usize)> {
        q.iter().map(|q| (q.head, q.tail)).collect()
    }

    /// Smallest max load over every contiguous split into `parts` runs.
    fn brute_min_max(units: &[usize], parts: usize) -> usize {
        fn go(units: &[usize], parts: usize, cur_max: usize, best: &mut usize) {
            if parts == 1 {
                *best = (*best).min(cur_max.max(units.iter().sum()));
                return;
            }
            for cut in 0..=units.len() {
                let load = units[..cut].iter().sum::<usize>();
                go(&units[cut..], parts - 1, cur_max.max(load), best);
            }
        }
        let mut best = usize::MAX;
        go(units, parts, 0, &mut best);
        best
    }

    #[test]
    fn even_split_on_batch_boundary() {
        let q = partition_blocks(8, 2, &plan_of(&[2, 2, 2, 2]));
        assert_eq!(ranges(&q), vec![(0, 4), (4, 8)]);
    }

    #[test]
    fn single_block_batches_two_per_sm() {
        let q = partition_blocks(4, 2, &plan_of(&[1, 1, 1, 1]));
        assert_eq!(ranges(&q), vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn three_batches_two_sms() {
        let sizes = [2, 2, 2];
        let q = partition_blocks(6, 2, &plan_of(&sizes));
        let loads: Vec<usize> = q.iter().map(|q| q.tail - q.head).collect();
        assert_eq!(loads, vec![4, 2]);
        assert_eq!(*loads.iter().max().unwrap(), brute_min_max(&sizes, 2));
    }

    #[test]
    fn oversized_batch_is_split() {
        let q = partition_blocks(8, 2, &plan_of(&[8]));
        assert_eq!(ranges(&q), vec![(0, 4), (4, 8)]);
    }

    #[test]
    fn no_sm_left_idle_when_batches_suffice() {
        let q = partition_blocks(4, 3, &plan_of(&[1, 1, 1, 1]));
        let loads: Vec<usize> = q.iter().map(|q| q.tail - q.head).collect();
        assert_eq!(loads, vec![1, 2, 1]);
    }

    #[test]
    fn queue_pops_in_order() {
        let mut q = DispatchQueue { sm_id: 0, head: 4, tail: 8 };
        assert_eq!(q.next_block(), Some(4));
        assert_eq!(q.head, 5);
        let mut q = DispatchQueue { sm_id: 0, head: 0, tail: 4 };
        let popped: Vec<_> = std::iter::from_fn(|| q.next_block()).collect();
        assert_eq!(popped, vec![0, 1, 2, 3]);
        assert_eq!(q.next_block(), None);
        assert_eq!(q.head, q.tail);
    }

    #[test]
    fn interleaved_lowest_sm_first() {
        let mut d = InterleavedDispatcher::new(4, None);
        assert_eq!(d.dispatch_round(&[0, 1]), vec![(0, 0), (1, 1)]);
        assert_eq!(d.dispatch_round(&[0, 1]), vec![(0, 2), (1, 3)]);
        assert!(d.dispatch_round(&[0, 1]).is_empty());
    }

    #[test]
    fn interleaved_single_sm_is_serial() {
        let mut d = InterleavedDispatcher::new(3, None);
        let got: Vec<_> = (0..3).flat_map(|_| d.dispatch_round(&[0])).collect();
        assert_eq!(got, vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn seeded_interleaving_is_reproducible() {
        let run = |seed| {
            let mut d = InterleavedDispatcher::new(64, Some(seed));
            (0..8).flat_map(|_| d.dispatch_round(&[0, 1, 2, 3])).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    proptest! {
        #[test]
        fn partition_is_optimal_contiguous_and_complete(
            sizes in prop::collection::vec(1usize..6, 1..9),
            sms in 1usize..5,
        ) {
            let plan = plan_of(&sizes);
            let total = plan.total_blocks();
            let q = partition_blocks(total, sms, &plan);
            prop_assert_eq!(q.len(), sms);
            prop_assert_eq!(q[0].head, 0);
            prop_assert_eq!(q[sms - 1].tail, total);
            for w in q.windows(2) {
                prop_assert_eq!(w[0].tail, w[1].head);
            }
            let units = dispatch_units(&plan, sms);
            let max = q.iter().map(|q| q.tail - q.head).max().unwrap();
            prop_assert_eq!(max, brute_min_max(&units, sms));
            // Boundaries fall on unit boundaries.
            let mut edges = std::collections::BTreeSet::new();
            let mut acc = 0;
            edges.insert(0);
            for u in &units { acc += u; edges.insert(acc); }
            for r in &q { prop_assert!(edges.contains(&r.head)); }
        }
    }
}
