//! Declarative kernel and CPU traffic descriptions, and the access streams
//! generated from them.
//!
//! A kernel is a 1D/2D grid of 1D/2D thread blocks plus one
//! [`MatrixMapping`] per data matrix. Each thread owns `accesses_per_thread`
//! distinct elements of every matrix and touches each of them once, one
//! warp-wide memory instruction per element slot.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// CPU accesses are generated at this granularity.
pub const CPU_ACCESS_BYTES: u64 = 64;

pub const WORKLOAD_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dim2 {
    pub x: u32,
    #[serde(default = "one")]
    pub y: u32,
    /// Present only so that 3D shapes get a targeted error instead of an
    /// unknown-field one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<u32>,
}

fn one() -> u32 {
    1
}

impl Dim2 {
    pub const fn new(x: u32, y: u32) -> Self {
        Dim2 { x, y, z: None }
    }

    pub fn volume(&self) -> u64 {
        self.x as u64 * self.y as u64
    }
}

/// A thread block coordinate. The z component is always zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId {
    pub x: u32,
    pub y: u32,
}

impl BlockId {
    pub const fn new(x: u32, y: u32) -> Self {
        BlockId { x, y }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},0)", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingKind {
    /// Each block walks one contiguous address range; consecutive blocks
    /// take consecutive ranges.
    Clustered,
    /// Element position follows the global thread coordinates, so
    /// neighbouring blocks interleave along matrix rows.
    Interleaved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixMapping {
    pub base_addr: u64,
    pub element_size: u64,
    /// Elements per matrix row.
    pub row_len: u64,
    pub mapping_kind: MappingKind,
    pub accesses_per_thread: u32,
    #[serde(default = "default_read_fraction")]
    pub read_fraction: f64,
}

fn default_read_fraction() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub name: String,
    pub grid_dim: Dim2,
    pub block_dim: Dim2,
    pub warp_size: u32,
    /// Non-memory warp instructions issued between two memory instructions.
    #[serde(default)]
    pub compute_gap: u32,
    pub matrices: Vec<MatrixMapping>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddressRegion {
    pub start: u64,
    pub len: u64,
}

impl AddressRegion {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuTrafficSpec {
    /// Requests per 1000 cycles.
    pub request_rate: f64,
    pub address_region: AddressRegion,
    /// Fraction of reads.
    pub rw_ratio: f64,
    /// Length of a back-to-back run of requests.
    #[serde(default = "one")]
    pub burstiness: u32,
    pub seed: u64,
}

/// One thread-level memory access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub virtual_addr: u64,
    pub is_read: bool,
    /// Warp index within the block.
    pub warp_id: u32,
    pub block_id: BlockId,
    /// Filled in once a batch plan exists.
    pub batch_id: Option<u32>,
    /// Memory-instruction ordinal within the warp.
    pub issue_slot: u32,
}

/// The accesses of one warp in issue order. Events sharing an `issue_slot`
/// belong to the same warp instruction, one per active lane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WarpTrace {
    pub warp_id: u32,
    pub active_lanes: u32,
    pub events: Vec<AccessEvent>,
}

impl WarpTrace {
    /// Events grouped per warp instruction.
    pub fn instructions(&self) -> impl Iterator<Item = &[AccessEvent]> {
        self.events.chunk_by(|a, b| a.issue_slot == b.issue_slot)
    }
}

/// Top-level workload file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadFile {
    #[serde(default = "workload_schema")]
    pub schema_version: u32,
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_traffic: Option<CpuTrafficSpec>,
}

fn workload_schema() -> u32 {
    WORKLOAD_SCHEMA_VERSION
}

impl WorkloadFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let wl: WorkloadFile = serde_json::from_str(&text).map_err(|source| SimError::Parse {
            path: path.to_owned(),
            source,
        })?;
        wl.validate()?;
        Ok(wl)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != WORKLOAD_SCHEMA_VERSION {
            return Err(SimError::invalid(
                "workload",
                format!("unsupported schema_version {}", self.schema_version),
            ));
        }
        self.kernel.validate()?;
        if let Some(cpu) = &self.cpu_traffic {
            cpu.validate()?;
            for (i, m) in self.kernel.matrices.iter().enumerate() {
                let (lo, hi) = (m.base_addr, m.base_addr + self.kernel.matrix_bytes(m));
                if lo < cpu.address_region.end() && cpu.address_region.start < hi {
                    return Err(SimError::invalid(
                        "workload",
                        format!("cpu_traffic.address_region overlaps matrices[{i}]"),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl MatrixMapping {
    fn validate(&self, idx: usize, spec: &KernelSpec) -> Result<()> {
        let field = |f: &str| format!("matrices[{idx}].{f}");
        if self.element_size == 0 {
            return Err(SimError::invalid("kernel", format!("{} must be >= 1", field("element_size"))));
        }
        if self.row_len == 0 {
            return Err(SimError::invalid("kernel", format!("{} must be >= 1", field("row_len"))));
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(SimError::invalid(
                "kernel",
                format!("{} must lie in [0,1]", field("read_fraction")),
            ));
        }
        if self.mapping_kind == MappingKind::Interleaved {
            let need = self.accesses_per_thread as u64 * spec.global_threads_x();
            if self.accesses_per_thread > 0 && self.row_len < need {
                return Err(SimError::invalid(
                    "kernel",
                    format!(
                        "{}: interleaved mapping reaches column {} but rows hold {} elements",
                        field("row_len"),
                        need - 1,
                        self.row_len
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Whether slot `j` of this matrix is a read. Reads are spread evenly
    /// over the slots so the running read count tracks `read_fraction`.
    pub fn slot_is_read(&self, j: u32) -> bool {
        let r = self.read_fraction;
        ((j as f64 + 1.0) * r).round() > (j as f64 * r).round()
    }
}

impl CpuTrafficSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.request_rate >= 0.0 && self.request_rate <= 1000.0) {
            return Err(SimError::invalid(
                "cpu_traffic",
                "request_rate must lie in [0, 1000] requests per 1000 cycles",
            ));
        }
        if self.address_region.len < CPU_ACCESS_BYTES {
            return Err(SimError::invalid("cpu_traffic", "address_region is empty"));
        }
        if !(0.0..=1.0).contains(&self.rw_ratio) {
            return Err(SimError::invalid("cpu_traffic", "rw_ratio must lie in [0,1]"));
        }
        if self.burstiness == 0 {
            return Err(SimError::invalid("cpu_traffic", "burstiness must be >= 1"));
        }
        Ok(())
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("grid_dim", &self.grid_dim), ("block_dim", &self.block_dim)] {
            if matches!(d.z, Some(z) if z > 1) {
                return Err(SimError::invalid(
                    "kernel",
                    format!("{name}: 3D shapes are not supported"),
                ));
            }
            if d.volume() == 0 {
                return Err(SimError::invalid("kernel", format!("{name} must be non-empty")));
            }
        }
        if self.warp_size == 0 {
            return Err(SimError::invalid("kernel", "warp_size must be >= 1"));
        }
        for (i, m) in self.matrices.iter().enumerate() {
            m.validate(i, self)?;
        }
        let mut spans: Vec<(u64, u64, usize)> = self
            .matrices
            .iter()
            .enumerate()
            .map(|(i, m)| (m.base_addr, m.base_addr + self.matrix_bytes(m), i))
            .filter(|s| s.1 > s.0)
            .collect();
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(SimError::invalid(
                    "kernel",
                    format!("matrices[{}] overlaps matrices[{}]", w[0].2, w[1].2),
                ));
            }
        }
        Ok(())
    }

    pub fn total_blocks(&self) -> u32 {
        (self.grid_dim.x * self.grid_dim.y) as u32
    }

    pub fn threads_per_block(&self) -> u32 {
        self.block_dim.x * self.block_dim.y
    }

    pub fn warps_per_block(&self) -> u32 {
        self.threads_per_block().div_ceil(self.warp_size)
    }

    fn global_threads_x(&self) -> u64 {
        self.grid_dim.x as u64 * self.block_dim.x as u64
    }

    pub fn block_linear(&self, b: BlockId) -> u32 {
        b.y * self.grid_dim.x + b.x
    }

    pub fn block_at(&self, linear: u32) -> BlockId {
        BlockId::new(linear % self.grid_dim.x, linear / self.grid_dim.x)
    }

    /// Memory instructions per warp.
    pub fn slots_per_warp(&self) -> u32 {
        self.matrices.iter().map(|m| m.accesses_per_thread).sum()
    }

    /// Bytes spanned by one matrix's footprint.
    pub fn matrix_bytes(&self, m: &MatrixMapping) -> u64 {
        let k = m.accesses_per_thread as u64;
        let elements = match m.mapping_kind {
            MappingKind::Clustered => {
                let n = self.total_blocks() as u64 * self.threads_per_block() as u64 * k;
                n.div_ceil(m.row_len) * m.row_len
            }
            MappingKind::Interleaved => {
                if k == 0 {
                    0
                } else {
                    self.grid_dim.y as u64 * self.block_dim.y as u64 * m.row_len
                }
            }
        };
        elements * m.element_size
    }

    /// Element index touched by thread (tx, ty) of `block` for slot `j`.
    pub fn element_index(&self, m: &MatrixMapping, block: BlockId, tx: u32, ty: u32, j: u32) -> u64 {
        match m.mapping_kind {
            MappingKind::Clustered => {
                let t = self.threads_per_block() as u64;
                let k = m.accesses_per_thread as u64;
                let b = self.block_linear(block) as u64;
                let lane = (ty * self.block_dim.x + tx) as u64;
                b * t * k + j as u64 * t + lane
            }
            MappingKind::Interleaved => {
                let gx = block.x as u64 * self.block_dim.x as u64 + tx as u64;
                let gy = block.y as u64 * self.block_dim.y as u64 + ty as u64;
                gy * m.row_len + j as u64 * self.global_threads_x() + gx
            }
        }
    }

    /// Copy of this spec with every matrix based at address zero.
    pub fn with_zero_bases(&self) -> KernelSpec {
        let mut s = self.clone();
        for m in &mut s.matrices {
            m.base_addr = 0;
        }
        s
    }
}

/// All block ids, x fastest.
pub fn enumerate_blocks(spec: &KernelSpec) -> Vec<BlockId> {
    (0..spec.grid_dim.y)
        .flat_map(|y| (0..spec.grid_dim.x).map(move |x| BlockId::new(x, y)))
        .collect()
}

/// Per-warp access streams of one block.
pub fn gen_block_trace(spec: &KernelSpec, block: BlockId) -> Result<Vec<WarpTrace>> {
    if block.x >= spec.grid_dim.x || block.y >= spec.grid_dim.y {
        return Err(SimError::invalid(
            "block",
            format!("{block} outside grid {}x{}", spec.grid_dim.x, spec.grid_dim.y),
        ));
    }
    let threads = spec.threads_per_block();
    let mut warps = Vec::with_capacity(spec.warps_per_block() as usize);
    for w in 0..spec.warps_per_block() {
        let first = w * spec.warp_size;
        let lanes = spec.warp_size.min(threads - first);
        let mut events = Vec::with_capacity((lanes * spec.slots_per_warp()) as usize);
        let mut slot = 0;
        for m in &spec.matrices {
            for j in 0..m.accesses_per_thread {
                let is_read = m.slot_is_read(j);
                for lane in 0..lanes {
                    let t = first + lane;
                    let (tx, ty) = (t % spec.block_dim.x, t / spec.block_dim.x);
                    let idx = spec.element_index(m, block, tx, ty, j);
                    events.push(AccessEvent {
                        virtual_addr: m.base_addr + idx * m.element_size,
                        is_read,
                        warp_id: w,
                        block_id: block,
                        batch_id: None,
                        issue_slot: slot,
                    });
                }
                slot += 1;
            }
        }
        warps.push(WarpTrace {
            warp_id: w,
            active_lanes: lanes,
            events,
        });
    }
    Ok(warps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpuRequest {
    pub cycle: u64,
    pub virtual_addr: u64,
    pub is_read: bool,
}

/// Streaming form of [`gen_cpu_traffic`]; the engine pulls one cycle at a time.
///
/// Bursts of `burstiness` back-to-back requests start with a per-idle-cycle
/// probability chosen so the long-run rate equals `request_rate / 1000`.
#[derive(Debug)]
pub struct CpuTrafficGen {
    spec: CpuTrafficSpec,
    rng: ChaCha8Rng,
    start_prob: f64,
    burst_left: u32,
    next_cycle: u64,
}

impl CpuTrafficGen {
    pub fn new(spec: &CpuTrafficSpec) -> Self {
        let r = spec.request_rate / 1000.0;
        let b = spec.burstiness as f64;
        let start_prob = if r <= 0.0 { 0.0 } else { (r / (b * (1.0 - r) + r)).min(1.0) };
        CpuTrafficGen {
            spec: spec.clone(),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            start_prob,
            burst_left: 0,
            next_cycle: 0,
        }
    }

    /// Request emitted at `cycle`, if any. Must be called once per cycle in
    /// increasing order starting from zero.
    pub fn step(&mut self, cycle: u64) -> Option<CpuRequest> {
        debug_assert_eq!(cycle, self.next_cycle);
        self.next_cycle = cycle + 1;
        if self.start_prob == 0.0 {
            return None;
        }
        if self.burst_left == 0 {
            if self.rng.gen::<f64>() >= self.start_prob {
                return None;
            }
            self.burst_left = self.spec.burstiness;
        }
        self.burst_left -= 1;
        let lines = self.spec.address_region.len / CPU_ACCESS_BYTES;
        let line = self.rng.gen_range(0..lines);
        let is_read = self.rng.gen::<f64>() < self.spec.rw_ratio;
        Some(CpuRequest {
            cycle,
            virtual_addr: self.spec.address_region.start + line * CPU_ACCESS_BYTES,
            is_read,
        })
    }
}

pub fn gen_cpu_traffic(spec: &CpuTrafficSpec, horizon: u64) -> Vec<CpuRequest> {
    let mut gen = CpuTrafficGen::new(spec);
    (0..horizon).filter_map(|c| gen.step(c)).collect()
}
