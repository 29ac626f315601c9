//! Where pages land under first-touch, coloring and the CPU/GPU row split.
//!
//!     cargo run --example page_coloring

use tbsim::memmap::{AddressLayout, AllocPolicy, Owner, PageTable, PlacementOptions};

fn main() -> tbsim::Result<()> {
    // 1 channel, 4 banks, 2 pages per row.
    let layout = AddressLayout {
        byte_offset_bits: 6,
        column_bits: 7,
        channel_bits: 0,
        bank_bits: 2,
        row_bits: 8,
        page_offset_bits: 12,
    };
    for policy in [AllocPolicy::LocalFirstTouch, AllocPolicy::Coloring, AllocPolicy::ColoringHetero] {
        let mut pt = PageTable::new(policy, layout, None, 2, PlacementOptions::default())?;
        if policy.is_coloring() {
            println!("{policy:?}: SM0 colors {:?}, SM1 colors {:?}", pt.color_map().colors(0), pt.color_map().colors(1));
        } else {
            println!("{policy:?}");
        }
        // Pages 0..4 belong to SM0, 4..8 to SM1, then two CPU pages.
        let touches = (0..8u64)
            .map(|v| (v, Owner::Gpu((v / 4) as usize)))
            .chain([(100, Owner::Cpu), (101, Owner::Cpu)]);
        for (vpn, owner) in touches {
            let e = pt.allocate_page(vpn, owner)?;
            let c = pt.coord(&e);
            println!(
                "  vpn {vpn:>3} {:<7} -> frame {:>4}  bank {} row {:>3} col {:>3}",
                format!("{owner:?}"),
                e.frame,
                c.bank,
                c.row,
                c.column
            );
        }
    }
    Ok(())
}
