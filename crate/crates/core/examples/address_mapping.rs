//! Split physical addresses into DRAM coordinates and check whether a
//! layout leaves room for page coloring.
//!
//!     cargo run --example address_mapping

use tbsim::memmap::AddressLayout;

fn main() -> tbsim::Result<()> {
    let l = AddressLayout::default();
    println!(
        "default layout: {}-bit addresses, {} channels x {} banks x {} rows, {} B rows, {} B pages",
        l.address_width(),
        l.channels(),
        l.banks(),
        l.rows(),
        l.row_bytes(),
        l.page_size()
    );
    for addr in [0u64, 0x40, 0x1000, 0x2000, 0x4000, 0x3_2a7c0] {
        let c = l.decompose(addr)?;
        println!("  {addr:#9x} -> {c:?} -> {:#x}", l.compose(&c));
    }

    let wide_pages = AddressLayout {
        page_offset_bits: 14,
        ..l
    };
    for (name, layout) in [("default", l), ("16 KiB pages", wide_pages)] {
        match layout.validate_for_coloring() {
            Ok(()) => println!("{name}: coloring feasible"),
            Err(e) => println!("{name}: {e}"),
        }
    }
    Ok(())
}
