use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::layout::{AddressLayout, DramCoord};
use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pool {
    Gddr,
    Ddr,
}

impl Pool {
    pub fn name(&self) -> &'static str {
        match self {
            Pool::Gddr => "GDDR",
            Pool::Ddr => "DDR",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocPolicy {
    /// Next free GDDR frame; DDR only once GDDR is full.
    LocalFirstTouch,
    /// GPU pages go to banks colored to the owning SM.
    Coloring,
    /// GPU pages split between pools in proportion to pool bandwidth.
    BwAware,
    /// Coloring within the low (GPU) rows of each bank; CPU pages in the high rows.
    ColoringHetero,
}

impl AllocPolicy {
    pub fn is_coloring(&self) -> bool {
        matches!(self, AllocPolicy::Coloring | AllocPolicy::ColoringHetero)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Owner {
    Gpu(usize),
    Cpu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Locality {
    Local,
    Remote,
}

/// SM -> the (channel, bank) pairs its pages are colored to. Color index
/// `channel * banks + bank` goes to SM `index % num_sms`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorMap {
    per_sm: Vec<Vec<(u32, u32)>>,
    banks: u32,
    num_sms: usize,
}

impl ColorMap {
    pub fn even(num_sms: usize, layout: &AddressLayout) -> Result<Self> {
        let colors = (layout.channels() * layout.banks()) as usize;
        if num_sms == 0 || num_sms > colors {
            return Err(SimError::invalid(
                "coloring",
                format!("{num_sms} SMs cannot share {colors} (channel, bank) colors"),
            ));
        }
        let mut per_sm = vec![Vec::new(); num_sms];
        for ch in 0..layout.channels() {
            for bank in 0..layout.banks() {
                let idx = (ch * layout.banks() + bank) as usize;
                per_sm[idx % num_sms].push((ch, bank));
            }
        }
        Ok(ColorMap {
            per_sm,
            banks: layout.banks(),
            num_sms,
        })
    }

    pub fn colors(&self, sm: usize) -> &[(u32, u32)] {
        &self.per_sm[sm]
    }

    pub fn owner_of(&self, channel: u32, bank: u32) -> usize {
        (channel * self.banks + bank) as usize % self.num_sms
    }

    pub fn contains(&self, sm: usize, channel: u32, bank: u32) -> bool {
        self.owner_of(channel, bank) == sm
    }
}

/// Per-bank row split between agents: GPU rows low, CPU rows high.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRegion {
    pub gpu_rows: Range<u32>,
    pub cpu_rows: Range<u32>,
}

impl FrameRegion {
    pub fn split(rows: u32, cpu_fraction: f64) -> Result<Self> {
        let cpu = (rows as f64 * cpu_fraction).ceil() as u32;
        if cpu == 0 || cpu >= rows {
            return Err(SimError::invalid(
                "layout",
                format!("cpu_row_fraction {cpu_fraction} leaves an empty region of {rows} rows"),
            ));
        }
        Ok(FrameRegion {
            gpu_rows: 0..rows - cpu,
            cpu_rows: rows - cpu..rows,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageEntry {
    pub vpn: u64,
    pub pool: Pool,
    pub frame: u64,
    pub owner: Owner,
    /// Colored placement failed and the page went to any free frame.
    pub spilled: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementOptions {
    /// Share of each bank's rows reserved for CPU pages under `ColoringHetero`.
    pub cpu_row_fraction: f64,
    /// Relative bandwidth of the GDDR pool for `BwAware`.
    pub gddr_bandwidth: u32,
    /// Relative bandwidth of the DDR pool for `BwAware`.
    pub ddr_bandwidth: u32,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            cpu_row_fraction: 0.25,
            gddr_bandwidth: 2,
            ddr_bandwidth: 1,
        }
    }
}

#[derive(Debug)]
struct PoolFrames {
    layout: AddressLayout,
    used: HashSet<u64>,
    cursor: u64,
}

impl PoolFrames {
    fn new(layout: AddressLayout) -> Self {
        PoolFrames {
            layout,
            used: HashSet::new(),
            cursor: 0,
        }
    }

    /// Frames whose row lies in `rows` form one contiguous frame range.
    fn frame_range(&self, rows: &Range<u32>) -> Range<u64> {
        let shift = self.layout.address_width() - self.layout.page_offset_bits - self.layout.row_bits;
        (rows.start as u64) << shift..(rows.end as u64) << shift
    }

    fn take(&mut self, frame: u64) -> bool {
        self.used.insert(frame)
    }

    fn next_free_in(&mut self, range: Range<u64>) -> Option<u64> {
        let mut f = self.cursor.max(range.start);
        while f < range.end {
            if self.take(f) {
                if range.start == 0 {
                    self.cursor = f + 1;
                }
                return Some(f);
            }
            f += 1;
        }
        None
    }

    fn coord(&self, frame: u64) -> DramCoord {
        self.layout
            .decompose(frame << self.layout.page_offset_bits)
            .expect("frame inside pool")
    }
}

/// Virtual-to-physical page map with the allocation policies.
#[derive(Debug)]
pub struct PageTable {
    policy: AllocPolicy,
    gddr: PoolFrames,
    ddr: Option<PoolFrames>,
    colors: ColorMap,
    region: Option<FrameRegion>,
    opts: PlacementOptions,
    entries: BTreeMap<u64, PageEntry>,
    /// Colored slot ordinal reserved ahead of time for a page.
    planned: HashMap<u64, (usize, u64)>,
    next_ordinal: Vec<u64>,
    cpu_ordinal: u64,
    gpu_pages: u64,
    spilled: Vec<u64>,
}

impl PageTable {
    pub fn new(
        policy: AllocPolicy,
        gddr: AddressLayout,
        ddr: Option<AddressLayout>,
        num_sms: usize,
        opts: PlacementOptions,
    ) -> Result<Self> {
        gddr.validate()?;
        if policy.is_coloring() {
            gddr.validate_for_coloring()?;
        }
        if let Some(d) = &ddr {
            d.validate()?;
            if d.page_offset_bits != gddr.page_offset_bits {
                return Err(SimError::invalid("layout", "GDDR and DDR page sizes differ"));
            }
        }
        if policy == AllocPolicy::BwAware {
            if ddr.is_none() {
                return Err(SimError::invalid("allocator", "BwAware needs a DDR pool"));
            }
            if opts.gddr_bandwidth + opts.ddr_bandwidth == 0 {
                return Err(SimError::invalid("allocator", "pool bandwidths are both zero"));
            }
        }
        let region = if policy == AllocPolicy::ColoringHetero {
            Some(FrameRegion::split(gddr.rows(), opts.cpu_row_fraction)?)
        } else {
            None
        };
        Ok(PageTable {
            policy,
            colors: ColorMap::even(num_sms, &gddr)?,
            gddr: PoolFrames::new(gddr),
            ddr: ddr.map(PoolFrames::new),
            region,
            opts,
            entries: BTreeMap::new(),
            planned: HashMap::new(),
            next_ordinal: vec![0; num_sms],
            cpu_ordinal: 0,
            gpu_pages: 0,
            spilled: Vec::new(),
        })
    }

    pub fn policy(&self) -> AllocPolicy {
        self.policy
    }

    pub fn color_map(&self) -> &ColorMap {
        &self.colors
    }

    pub fn region(&self) -> Option<&FrameRegion> {
        self.region.as_ref()
    }

    pub fn layout(&self, pool: Pool) -> &AddressLayout {
        match pool {
            Pool::Gddr => &self.gddr.layout,
            Pool::Ddr => &self.ddr.as_ref().expect("DDR pool configured").layout,
        }
    }

    pub fn page_size(&self) -> u64 {
        self.gddr.layout.page_size()
    }

    /// Reserves colored slots ahead of first touch so that pages of
    /// consecutive batches on one SM pack into the same rows regardless of
    /// the order warps later touch them. Pages already reserved keep their
    /// first reservation.
    pub fn reserve(&mut self, sm: usize, pages: impl IntoIterator<Item = u64>) {
        if !self.policy.is_coloring() {
            return;
        }
        for vpn in pages {
            if self.planned.contains_key(&vpn) || self.entries.contains_key(&vpn) {
                continue;
            }
            let n = self.next_ordinal[sm];
            self.planned.insert(vpn, (sm, n));
            self.next_ordinal[sm] = n + 1;
        }
    }

    pub fn lookup(&self, vpn: u64) -> Option<&PageEntry> {
        self.entries.get(&vpn)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PageEntry> {
        self.entries.values()
    }

    /// Pages that could not be colored.
    pub fn spilled_pages(&self) -> &[u64] {
        &self.spilled
    }

    fn gpu_rows(&self) -> Range<u32> {
        match &self.region {
            Some(r) => r.gpu_rows.clone(),
            None => 0..self.gddr.layout.rows(),
        }
    }

    fn colored_frame(&self, sm: usize, ordinal: u64) -> Option<u64> {
        let l = &self.gddr.layout;
        let colors = self.colors.colors(sm);
        let ppr = l.pages_per_row();
        let rows = self.gpu_rows();
        let per_row_sweep = ppr * colors.len() as u64;
        let row = rows.start as u64 + ordinal / per_row_sweep;
        if row >= rows.end as u64 {
            return None;
        }
        let (channel, bank) = colors[((ordinal / ppr) % colors.len() as u64) as usize];
        let slot = ordinal % ppr;
        let addr = l.compose(&DramCoord {
            channel,
            bank,
            row: row as u32,
            column: (slot << (l.page_offset_bits - l.byte_offset_bits)) as u32,
            byte: 0,
        });
        Some(addr >> l.page_offset_bits)
    }

    fn colored_alloc(&mut self, sm: usize, start: u64) -> Option<u64> {
        let mut n = start;
        while let Some(f) = self.colored_frame(sm, n) {
            if self.gddr.take(f) {
                return Some(f);
            }
            n += 1;
        }
        None
    }

    fn cpu_frame(&mut self) -> Result<(Pool, u64)> {
        match self.region.clone() {
            Some(region) => {
                // Sweep CPU rows across every bank before moving up a row.
                let l = self.gddr.layout;
                let ppr = l.pages_per_row();
                let colors = (l.channels() * l.banks()) as u64;
                loop {
                    let n = self.cpu_ordinal;
                    self.cpu_ordinal += 1;
                    let row = region.cpu_rows.start as u64 + n / (ppr * colors);
                    if row >= region.cpu_rows.end as u64 {
                        return Err(SimError::Allocation("CPU row region exhausted".into()));
                    }
                    let color = (n / ppr) % colors;
                    let addr = l.compose(&DramCoord {
                        channel: (color / l.banks() as u64) as u32,
                        bank: (color % l.banks() as u64) as u32,
                        row: row as u32,
                        column: ((n % ppr) << (l.page_offset_bits - l.byte_offset_bits)) as u32,
                        byte: 0,
                    });
                    let f = addr >> l.page_offset_bits;
                    if self.gddr.take(f) {
                        return Ok((Pool::Gddr, f));
                    }
                }
            }
            None => self.first_touch(),
        }
    }

    fn first_touch(&mut self) -> Result<(Pool, u64)> {
        let all = 0..self.gddr.layout.frames();
        if let Some(f) = self.gddr.next_free_in(all) {
            return Ok((Pool::Gddr, f));
        }
        if let Some(ddr) = &mut self.ddr {
            let all = 0..ddr.layout.frames();
            if let Some(f) = ddr.next_free_in(all) {
                return Ok((Pool::Ddr, f));
            }
        }
        Err(SimError::Allocation("all memory pools exhausted".into()))
    }

    fn spill(&mut self, vpn: u64) -> Result<(Pool, u64)> {
        let range = self.gddr.frame_range(&self.gpu_rows());
        // The sequential cursor only tracks the full range.
        let f = if range.start == 0 {
            self.gddr.next_free_in(range)
        } else {
            let mut f = range.start;
            loop {
                if f >= range.end {
                    break None;
                }
                if self.gddr.take(f) {
                    break Some(f);
                }
                f += 1;
            }
        };
        match f {
            Some(f) => {
                self.spilled.push(vpn);
                Ok((Pool::Gddr, f))
            }
            None => Err(SimError::Allocation("GDDR pool exhausted".into())),
        }
    }

    /// Maps `vpn` on its first touch. Repeated calls return the existing entry.
    pub fn allocate_page(&mut self, vpn: u64, owner: Owner) -> Result<PageEntry> {
        if let Some(e) = self.entries.get(&vpn) {
            return Ok(*e);
        }
        let mut spilled = false;
        let (pool, frame) = match (owner, self.policy) {
            (Owner::Cpu, _) => self.cpu_frame()?,
            (Owner::Gpu(_), AllocPolicy::LocalFirstTouch) => self.first_touch()?,
            (Owner::Gpu(_), AllocPolicy::BwAware) => {
                let k = self.gpu_pages;
                let (g, d) = (self.opts.gddr_bandwidth as u64, self.opts.ddr_bandwidth as u64);
                let to_gddr = (k + 1) * g / (g + d) > k * g / (g + d);
                let f = if to_gddr {
                    self.gddr.next_free_in(0..self.gddr.layout.frames()).map(|f| (Pool::Gddr, f))
                } else {
                    let ddr = self.ddr.as_mut().expect("validated");
                    let n = ddr.layout.frames();
                    ddr.next_free_in(0..n).map(|f| (Pool::Ddr, f))
                };
                f.ok_or_else(|| SimError::Allocation("pool exhausted".into()))?
            }
            (Owner::Gpu(sm), AllocPolicy::Coloring | AllocPolicy::ColoringHetero) => {
                let frame = match self.planned.get(&vpn) {
                    // Reserved pages keep their planned SM even when another
                    // SM touches them first.
                    Some(&(planned_sm, n)) => self.colored_alloc(planned_sm, n),
                    None => {
                        let n = self.next_ordinal[sm];
                        self.next_ordinal[sm] = n + 1;
                        self.colored_alloc(sm, n)
                    }
                };
                match frame {
                    Some(f) => (Pool::Gddr, f),
                    None => {
                        spilled = true;
                        self.spill(vpn)?
                    }
                }
            }
        };
        if matches!(owner, Owner::Gpu(_)) {
            self.gpu_pages += 1;
        }
        let e = PageEntry {
            vpn,
            pool,
            frame,
            owner,
            spilled,
        };
        self.entries.insert(vpn, e);
        Ok(e)
    }

    /// Physical address of `vaddr`, allocating its page on first touch.
    pub fn translate(&mut self, vaddr: u64, owner: Owner) -> Result<(PageEntry, u64)> {
        let ps = self.page_size();
        let e = self.allocate_page(vaddr / ps, owner)?;
        Ok((e, e.frame * ps + vaddr % ps))
    }

    pub fn coord(&self, e: &PageEntry) -> DramCoord {
        match e.pool {
            Pool::Gddr => self.gddr.coord(e.frame),
            Pool::Ddr => self.ddr.as_ref().expect("DDR pool").coord(e.frame),
        }
    }

    /// Local iff the access lands in a GDDR bank colored to `sm`. Policies
    /// that do not color pages are judged against the same color map.
    pub fn classify_access(&self, sm: usize, pool: Pool, channel: u32, bank: u32) -> Locality {
        if pool == Pool::Gddr && self.colors.contains(sm, channel, bank) {
            Locality::Local
        } else {
            Locality::Remote
        }
    }

    /// `vpn,pool,channel,bank,row` for every mapped page, by vpn.
    pub fn dump_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["vpn", "pool", "channel", "bank", "row"])?;
        for e in self.entries.values() {
            let c = self.coord(e);
            out.write_record([
                e.vpn.to_string(),
                e.pool.name().to_string(),
                c.channel.to_string(),
                c.bank.to_string(),
                c.row.to_string(),
            ])?;
        }
        out.flush().map_err(|e| SimError::io("page table dump", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bank_layout() -> AddressLayout {
        AddressLayout {
            byte_offset_bits: 6,
            column_bits: 7,
            channel_bits: 0,
            bank_bits: 1,
            row_bits: 10,
            page_offset_bits: 12,
        }
    }

    fn one_bank_layout() -> AddressLayout {
        AddressLayout {
            bank_bits: 0,
            ..two_bank_layout()
        }
    }

    fn table(policy: AllocPolicy, layout: AddressLayout, sms: usize) -> PageTable {
        PageTable::new(policy, layout, None, sms, PlacementOptions::default()).unwrap()
    }

    #[test]
    fn colored_pages_follow_their_sm() {
        let mut t = table(AllocPolicy::Coloring, two_bank_layout(), 2);
        let a = t.allocate_page(0, Owner::Gpu(0)).unwrap();
        let b = t.allocate_page(1, Owner::Gpu(1)).unwrap();
        assert_eq!(t.coord(&a).bank, 0);
        assert_eq!(t.coord(&b).bank, 1);
        assert_eq!(t.classify_access(0, a.pool, 0, 0), Locality::Local);
        assert_eq!(t.classify_access(0, b.pool, 0, 1), Locality::Remote);
    }

    #[test]
    fn two_pages_per_row_pack_in_order() {
        let mut t = table(AllocPolicy::Coloring, one_bank_layout(), 1);
        t.reserve(0, [10, 11, 12, 13]);
        // Touch order differs from batch order; rows follow the reservation.
        let rows: Vec<u32> = [12, 10, 13, 11]
            .iter()
            .map(|&v| {
                let e = t.allocate_page(v, Owner::Gpu(0)).unwrap();
                t.coord(&e).row
            })
            .collect();
        assert_eq!(rows, vec![1, 0, 1, 0]);
        let cols: Vec<u32> = [10, 11]
            .iter()
            .map(|v| t.coord(t.lookup(*v).unwrap()).column)
            .collect();
        assert_eq!(cols, vec![0, 64]);
    }

    #[test]
    fn bw_aware_splits_by_bandwidth() {
        let ddr = AddressLayout {
            channel_bits: 0,
            bank_bits: 3,
            ..AddressLayout::default()
        };
        let mut t = PageTable::new(
            AllocPolicy::BwAware,
            AddressLayout::default(),
            Some(ddr),
            8,
            PlacementOptions::default(),
        )
        .unwrap();
        for v in 0..300 {
            t.allocate_page(v, Owner::Gpu((v % 8) as usize)).unwrap();
        }
        let gddr = t.entries().filter(|e| e.pool == Pool::Gddr).count();
        assert_eq!((gddr, 300 - gddr), (200, 100));
    }

    #[test]
    fn hetero_rows_are_disjoint() {
        let mut t = table(AllocPolicy::ColoringHetero, two_bank_layout(), 2);
        let region = t.region().unwrap().clone();
        for v in 0..64 {
            let e = t.allocate_page(v, Owner::Gpu((v % 2) as usize)).unwrap();
            assert!(region.gpu_rows.contains(&t.coord(&e).row));
        }
        for v in 1000..1064 {
            let e = t.allocate_page(v, Owner::Cpu).unwrap();
            assert!(region.cpu_rows.contains(&t.coord(&e).row));
        }
    }

    #[test]
    fn color_exhaustion_spills() {
        let tiny = AddressLayout {
            row_bits: 1,
            ..two_bank_layout()
        };
        let mut t = table(AllocPolicy::Coloring, tiny, 2);
        // SM0 owns bank 0: 2 rows x 2 pages.
        for v in 0..4 {
            assert!(!t.allocate_page(v, Owner::Gpu(0)).unwrap().spilled);
        }
        let e = t.allocate_page(4, Owner::Gpu(0)).unwrap();
        assert!(e.spilled);
        assert_eq!(t.spilled_pages(), &[4]);
        for v in 5..8 {
            t.allocate_page(v, Owner::Gpu(0)).unwrap();
        }
        assert!(matches!(
            t.allocate_page(8, Owner::Gpu(0)),
            Err(SimError::Allocation(_))
        ));
    }

    #[test]
    fn frames_are_injective() {
        let mut t = table(AllocPolicy::Coloring, two_bank_layout(), 2);
        for v in 0..200 {
            let owner = if v % 5 == 0 { Owner::Cpu } else { Owner::Gpu((v % 2) as usize) };
            t.allocate_page(v, owner).unwrap();
        }
        let frames: HashSet<u64> = t.entries().map(|e| e.frame).collect();
        assert_eq!(frames.len(), 200);
    }

    #[test]
    fn coloring_rejects_infeasible_layout() {
        let bad = AddressLayout {
            page_offset_bits: 14,
            ..AddressLayout::default()
        };
        assert!(PageTable::new(AllocPolicy::Coloring, bad, None, 8, PlacementOptions::default()).is_err());
        assert!(PageTable::new(AllocPolicy::LocalFirstTouch, bad, None, 8, PlacementOptions::default()).is_ok());
    }

    #[test]
    fn even_color_division() {
        let cm = ColorMap::even(8, &AddressLayout::default()).unwrap();
        for sm in 0..8 {
            assert_eq!(cm.colors(sm).len(), 4);
        }
        assert_eq!(cm.colors(0), &[(0, 0), (0, 8), (1, 0), (1, 8)]);
    }
}
