//! Physical address layout and virtual-to-physical page placement.

mod layout;
mod page_table;

pub use layout::{AddressLayout, DramCoord};
pub use page_table::{
    AllocPolicy, ColorMap, FrameRegion, Locality, Owner, PageEntry, PageTable, PlacementOptions, Pool,
};
