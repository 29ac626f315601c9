//! Thread batch formation: find the thread block stride that keeps pages
//! private to one batch, group blocks accordingly, and measure what sharing
//! is left.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::workload::{enumerate_blocks, gen_block_trace, BlockId, KernelSpec, MappingKind};

pub const PLAN_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formation {
    FixedStride,
    /// `batch = linear_block_id % stride`.
    Modulation,
    /// No grouping gets the shared fraction under the threshold; batches
    /// fall back to the best fixed stride.
    Fallback,
}

/// How block ids map to batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grouping {
    Stride(u32),
    Modulo(u32),
}

impl Grouping {
    pub fn batch_of(&self, linear_block: u32) -> u32 {
        match *self {
            Grouping::Stride(s) => linear_block / s,
            Grouping::Modulo(m) => linear_block % m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadBatch {
    pub batch_id: u32,
    pub block_ids: Vec<BlockId>,
    pub page_set: BTreeSet<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub stride: u32,
    pub formation: Formation,
    pub batches: Vec<ThreadBatch>,
    pub page_size: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingHistogram {
    /// Sharing distance -> page count.
    pub bins: BTreeMap<u32, u64>,
    pub total_pages: u64,
}

impl SharingHistogram {
    pub fn exclusive_fraction(&self) -> f64 {
        if self.total_pages == 0 {
            return 1.0;
        }
        *self.bins.get(&0).unwrap_or(&0) as f64 / self.total_pages as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileOptions {
    /// Largest stride considered.
    pub stride_cap: u32,
    /// Every stride up to this bound is tried.
    pub exhaustive_upto: u32,
    /// Above this shared-page fraction the formation is `Fallback`.
    pub fallback_threshold: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            stride_cap: 64,
            exhaustive_upto: 16,
            fallback_threshold: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrideProfile {
    pub stride: u32,
    pub formation: Formation,
    pub shared_pages: u64,
    pub total_pages: u64,
}

/// Virtual pages touched by one block.
pub fn block_pages(spec: &KernelSpec, block: BlockId, page_size: u64) -> Result<BTreeSet<u64>> {
    Ok(gen_block_trace(spec, block)?
        .iter()
        .flat_map(|w| w.events.iter())
        .map(|e| e.virtual_addr / page_size)
        .collect())
}

/// Page -> sorted linear ids of the blocks touching it.
fn page_accessors(spec: &KernelSpec, page_size: u64) -> Result<BTreeMap<u64, Vec<u32>>> {
    let mut acc: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    for (linear, b) in enumerate_blocks(spec).into_iter().enumerate() {
        for p in block_pages(spec, b, page_size)? {
            acc.entry(p).or_default().push(linear as u32);
        }
    }
    Ok(acc)
}

fn shared_count(accessors: &[BTreeMap<u64, Vec<u32>>], g: Grouping) -> u64 {
    accessors
        .iter()
        .flat_map(|m| m.values())
        .filter(|blocks| {
            let first = g.batch_of(blocks[0]);
            blocks[1..].iter().any(|&b| g.batch_of(b) != first)
        })
        .count() as u64
}

fn candidate_strides(spec: &KernelSpec, opts: &ProfileOptions) -> Vec<u32> {
    let total = spec.total_blocks();
    if total == 1 {
        return vec![1];
    }
    // A single batch shares nothing by construction; it is never a candidate.
    let max = opts.stride_cap.min(total - 1).max(1);
    let mut c: BTreeSet<u32> = (1..=opts.exhaustive_upto.min(max)).collect();
    let tpb = spec.threads_per_block() as u64;
    for m in &spec.matrices {
        let per_row = match m.mapping_kind {
            MappingKind::Clustered => {
                let span = tpb * m.accesses_per_thread.max(1) as u64;
                (m.row_len / span).max(1) as u32
            }
            MappingKind::Interleaved => spec.grid_dim.x,
        };
        c.extend((1..=per_row).filter(|d| per_row % d == 0 && *d <= max));
        c.extend((1..).map(|k| k * per_row).take_while(|&s| s <= max));
    }
    c.into_iter().collect()
}

/// Stride minimising the number of pages shared across batches, smallest
/// stride on ties. Matrices are profiled at base address zero.
pub fn profile_stride(spec: &KernelSpec, page_size: u64) -> Result<StrideProfile> {
    profile_stride_with(spec, page_size, &ProfileOptions::default())
}

pub fn profile_stride_with(
    spec: &KernelSpec,
    page_size: u64,
    opts: &ProfileOptions,
) -> Result<StrideProfile> {
    if page_size == 0 {
        return Err(SimError::invalid("profile", "page_size must be >= 1"));
    }
    let zero = spec.with_zero_bases();
    let mut accessors = Vec::with_capacity(zero.matrices.len());
    for m in &zero.matrices {
        let single = KernelSpec {
            matrices: vec![m.clone()],
            ..zero.clone()
        };
        accessors.push(page_accessors(&single, page_size)?);
    }
    let total_pages: u64 = accessors.iter().map(|a| a.len() as u64).sum();
    if total_pages == 0 {
        return Err(SimError::NoAccesses);
    }

    let candidates = candidate_strides(spec, opts);
    let (best_stride, best_shared) = candidates
        .iter()
        .map(|&s| (s, shared_count(&accessors, Grouping::Stride(s))))
        .min_by_key(|&(s, n)| (n, s))
        .expect("at least one candidate stride");

    let best_mod = candidates
        .iter()
        .filter(|&&m| m >= 2)
        .map(|&m| (m, shared_count(&accessors, Grouping::Modulo(m))))
        .min_by_key(|&(m, n)| (n, m));

    let (stride, shared, formation) = match best_mod {
        Some((m, n)) if n < best_shared => (m, n, Formation::Modulation),
        _ => (best_stride, best_shared, Formation::FixedStride),
    };
    if shared as f64 / total_pages as f64 > opts.fallback_threshold {
        return Ok(StrideProfile {
            stride: best_stride,
            formation: Formation::Fallback,
            shared_pages: best_shared,
            total_pages,
        });
    }
    Ok(StrideProfile {
        stride,
        formation,
        shared_pages: shared,
        total_pages,
    })
}

/// Groups consecutive blocks `stride` at a time. A stride beyond the grid
/// yields one batch.
pub fn form_batches(spec: &KernelSpec, stride: u32, page_size: u64) -> Result<BatchPlan> {
    form_batches_with(spec, Grouping::Stride(stride), Formation::FixedStride, page_size)
}

pub fn form_batches_with(
    spec: &KernelSpec,
    grouping: Grouping,
    formation: Formation,
    page_size: u64,
) -> Result<BatchPlan> {
    let param = match grouping {
        Grouping::Stride(s) | Grouping::Modulo(s) => s,
    };
    if param == 0 {
        return Err(SimError::invalid("batching", "stride must be >= 1"));
    }
    if page_size == 0 {
        return Err(SimError::invalid("batching", "page_size must be >= 1"));
    }
    let mut by_batch: BTreeMap<u32, ThreadBatch> = BTreeMap::new();
    for (linear, b) in enumerate_blocks(spec).into_iter().enumerate() {
        let id = grouping.batch_of(linear as u32);
        let pages = block_pages(spec, b, page_size)?;
        let batch = by_batch.entry(id).or_insert_with(|| ThreadBatch {
            batch_id: id,
            block_ids: Vec::new(),
            page_set: BTreeSet::new(),
        });
        batch.block_ids.push(b);
        batch.page_set.extend(pages);
    }
    Ok(BatchPlan {
        stride: param,
        formation,
        batches: by_batch.into_values().collect(),
        page_size,
    })
}

/// Profiles the kernel and forms the resulting plan.
pub fn plan_kernel(spec: &KernelSpec, page_size: u64, opts: &ProfileOptions) -> Result<BatchPlan> {
    let prof = profile_stride_with(spec, page_size, opts)?;
    let grouping = match prof.formation {
        Formation::Modulation => Grouping::Modulo(prof.stride),
        _ => Grouping::Stride(prof.stride),
    };
    form_batches_with(spec, grouping, prof.formation, page_size)
}

pub fn sharing_histogram(plan: &BatchPlan) -> SharingHistogram {
    let mut span: BTreeMap<u64, (u32, u32)> = BTreeMap::new();
    for (idx, b) in plan.batches.iter().enumerate() {
        let idx = idx as u32;
        for &p in &b.page_set {
            span.entry(p)
                .and_modify(|(lo, hi)| {
                    *lo = (*lo).min(idx);
                    *hi = (*hi).max(idx);
                })
                .or_insert((idx, idx));
        }
    }
    let mut h = SharingHistogram {
        total_pages: span.len() as u64,
        ..Default::default()
    };
    for (lo, hi) in span.into_values() {
        *h.bins.entry(hi - lo).or_default() += 1;
    }
    h
}

impl BatchPlan {
    /// Blocks in dispatch order: batch by batch.
    pub fn dispatch_order(&self) -> Vec<BlockId> {
        self.batches.iter().flat_map(|b| b.block_ids.iter().copied()).collect()
    }

    pub fn total_blocks(&self) -> usize {
        self.batches.iter().map(|b| b.block_ids.len()).sum()
    }

    /// Linear block id -> batch id.
    pub fn batch_lookup(&self, spec: &KernelSpec) -> Vec<u32> {
        let mut out = vec![0; spec.total_blocks() as usize];
        for b in &self.batches {
            for &blk in &b.block_ids {
                out[spec.block_linear(blk) as usize] = b.batch_id;
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = PlanFile {
            schema_version: PLAN_SCHEMA_VERSION,
            histogram: sharing_histogram(self),
            plan: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| SimError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let file: PlanFile = serde_json::from_str(&text).map_err(|source| SimError::Parse {
            path: path.to_owned(),
            source,
        })?;
        if file.schema_version != PLAN_SCHEMA_VERSION {
            return Err(SimError::invalid(
                "plan",
                format!("unsupported schema_version {}", file.schema_version),
            ));
        }
        Ok(file.plan)
    }
}

/// On-disk form of a cached profiling result.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub schema_version: u32,
    pub plan: BatchPlan,
    pub histogram: SharingHistogram,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{Dim2, MatrixMapping};

    /// 2x2 grid of 4-thread 1D blocks, one matrix row per block.
    fn row_per_block() -> KernelSpec {
        KernelSpec {
            name: "rows".into(),
            grid_dim: Dim2::new(2, 2),
            block_dim: Dim2::new(4, 1),
            warp_size: 2,
            compute_gap: 0,
            matrices: vec![MatrixMapping {
                base_addr: 0,
                element_size: 4,
                row_len: 4,
                mapping_kind: MappingKind::Clustered,
                accesses_per_thread: 1,
                read_fraction: 1.0,
            }],
        }
    }

    fn tiled_2d() -> KernelSpec {
        let mut s = row_per_block();
        s.block_dim = Dim2::new(2, 2);
        s.matrices[0].mapping_kind = MappingKind::Interleaved;
        s
    }

    const ROW: u64 = 16;

    #[test]
    fn stride_one_when_page_is_a_row() {
        let p = profile_stride(&row_per_block(), ROW).unwrap();
        assert_eq!((p.stride, p.formation), (1, Formation::FixedStride));
    }

    #[test]
    fn stride_two_when_page_is_two_rows() {
        let s = row_per_block();
        let p = profile_stride(&s, 2 * ROW).unwrap();
        assert_eq!(p.stride, 2);
        let plan = form_batches(&s, p.stride, 2 * ROW).unwrap();
        assert_eq!(plan.batches.len(), 2);
        let h = sharing_histogram(&plan);
        assert_eq!(h.bins, BTreeMap::from([(0, 2)]));
        assert_eq!(h.exclusive_fraction(), 1.0);
    }

    #[test]
    fn interleaved_tiles_batch_by_block_row() {
        let s = tiled_2d();
        let p = profile_stride(&s, ROW).unwrap();
        assert_eq!(p.stride, 2);
        let plan = form_batches(&s, 2, ROW).unwrap();
        assert_eq!(plan.batches[0].block_ids, vec![BlockId::new(0, 0), BlockId::new(1, 0)]);
        assert_eq!(plan.batches[1].block_ids, vec![BlockId::new(0, 1), BlockId::new(1, 1)]);
        assert_eq!(plan.batches[0].page_set, [0, 1].into());
        assert_eq!(plan.batches[1].page_set, [2, 3].into());
    }

    #[test]
    fn remainder_batch() {
        let mut s = row_per_block();
        s.grid_dim = Dim2::new(5, 1);
        let plan = form_batches(&s, 2, ROW).unwrap();
        let sizes: Vec<_> = plan.batches.iter().map(|b| b.block_ids.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        let one = form_batches(&s, 9, ROW).unwrap();
        assert_eq!(one.batches.len(), 1);
    }

    #[test]
    fn adjacent_sharing_lands_in_bin_one() {
        let mut s = row_per_block();
        s.grid_dim = Dim2::new(8, 1);
        // Two rows per page with stride 1: each page spans batches i and i+1.
        let plan = form_batches(&s, 1, 2 * ROW).unwrap();
        let h = sharing_histogram(&plan);
        assert_eq!(h.bins, BTreeMap::from([(1, 4)]));
    }

    #[test]
    fn zero_access_kernel_is_an_error() {
        let mut s = row_per_block();
        s.matrices[0].accesses_per_thread = 0;
        assert!(matches!(profile_stride(&s, ROW), Err(SimError::NoAccesses)));
    }

    #[test]
    fn globally_shared_kernel_falls_back() {
        // Every block reads the whole 4-element vector.
        let mut s = row_per_block();
        s.grid_dim = Dim2::new(8, 1);
        s.block_dim = Dim2::new(1, 1);
        s.matrices[0].mapping_kind = MappingKind::Interleaved;
        s.matrices[0].row_len = 8;
        let p = profile_stride(&s, 1 << 12).unwrap();
        assert_eq!(p.formation, Formation::Fallback);
        assert_eq!(p.stride, 1);
    }

    #[test]
    fn modulo_grouping_beats_strides_on_column_sharing() {
        // Page p is touched by blocks p and p + 4.
        let acc: BTreeMap<u64, Vec<u32>> = (0..4).map(|p| (p as u64, vec![p, p + 4])).collect();
        let acc = [acc];
        assert_eq!(shared_count(&acc, Grouping::Modulo(4)), 0);
        assert!((1..8).all(|s| shared_count(&acc, Grouping::Stride(s)) > 0));

        let mut s = row_per_block();
        s.grid_dim = Dim2::new(4, 2);
        let plan = form_batches_with(&s, Grouping::Modulo(4), Formation::Modulation, ROW).unwrap();
        assert_eq!(plan.batches.len(), 4);
        assert_eq!(plan.batches[1].block_ids, vec![BlockId::new(1, 0), BlockId::new(1, 1)]);
    }

    #[test]
    fn plan_file_roundtrip() {
        let s = tiled_2d();
        let plan = form_batches(&s, 2, ROW).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        plan.save(&path).unwrap();
        assert_eq!(BatchPlan::load(&path).unwrap(), plan);
    }
}
