use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Bit-field layout of a physical address, least significant field first:
/// byte offset, column, channel, bank, row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddressLayout {
    pub byte_offset_bits: u32,
    pub column_bits: u32,
    pub channel_bits: u32,
    pub bank_bits: u32,
    pub row_bits: u32,
    pub page_offset_bits: u32,
}

impl Default for AddressLayout {
    /// 4 KiB pages over 8 KiB rows, 2 channels of 16 banks.
    fn default() -> Self {
        AddressLayout {
            byte_offset_bits: 6,
            column_bits: 7,
            channel_bits: 1,
            bank_bits: 4,
            row_bits: 14,
            page_offset_bits: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DramCoord {
    pub channel: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
    pub byte: u32,
}

fn mask(bits: u32) -> u64 {
    if bits == 0 {
        0
    } else {
        u64::MAX >> (64 - bits)
    }
}

impl AddressLayout {
    pub fn address_width(&self) -> u32 {
        self.byte_offset_bits + self.column_bits + self.channel_bits + self.bank_bits + self.row_bits
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.address_width();
        if w == 0 || w > 48 {
            return Err(SimError::invalid(
                "layout",
                format!("address width {w} outside 1..=48 bits"),
            ));
        }
        for (name, bits) in [
            ("byte_offset_bits", self.byte_offset_bits),
            ("column_bits", self.column_bits),
            ("channel_bits", self.channel_bits),
            ("bank_bits", self.bank_bits),
            ("row_bits", self.row_bits),
        ] {
            if bits > 24 {
                return Err(SimError::invalid("layout", format!("{name} = {bits} is too wide")));
            }
        }
        if self.page_offset_bits == 0 || self.page_offset_bits > w {
            return Err(SimError::invalid(
                "layout",
                format!("page_offset_bits must lie in 1..={w}"),
            ));
        }
        Ok(())
    }

    /// A page can be steered to any channel/bank/row only if the page offset
    /// fits inside the column and byte-offset bits.
    pub fn coloring_feasible(&self) -> bool {
        self.page_offset_bits <= self.column_bits + self.byte_offset_bits
    }

    pub fn validate_for_coloring(&self) -> Result<()> {
        self.validate()?;
        if !self.coloring_feasible() {
            return Err(SimError::invalid(
                "layout",
                format!(
                    "page coloring needs page_offset_bits ({}) <= column_bits + byte_offset_bits ({})",
                    self.page_offset_bits,
                    self.column_bits + self.byte_offset_bits
                ),
            ));
        }
        Ok(())
    }

    pub fn channels(&self) -> u32 {
        1 << self.channel_bits
    }

    pub fn banks(&self) -> u32 {
        1 << self.bank_bits
    }

    pub fn rows(&self) -> u32 {
        1 << self.row_bits
    }

    pub fn page_size(&self) -> u64 {
        1 << self.page_offset_bits
    }

    pub fn row_bytes(&self) -> u64 {
        1 << (self.byte_offset_bits + self.column_bits)
    }

    /// Pages sharing one DRAM row; meaningful when coloring is feasible.
    pub fn pages_per_row(&self) -> u64 {
        (self.row_bytes() / self.page_size()).max(1)
    }

    pub fn frames(&self) -> u64 {
        1 << (self.address_width() - self.page_offset_bits)
    }

    pub fn decompose(&self, addr: u64) -> Result<DramCoord> {
        let width = self.address_width();
        if addr >> width != 0 {
            return Err(SimError::AddressOutOfRange { addr, width });
        }
        let mut a = addr;
        let mut take = |bits: u32| {
            let v = (a & mask(bits)) as u32;
            a >>= bits;
            v
        };
        let byte = take(self.byte_offset_bits);
        let column = take(self.column_bits);
        let channel = take(self.channel_bits);
        let bank = take(self.bank_bits);
        let row = take(self.row_bits);
        Ok(DramCoord {
            channel,
            bank,
            row,
            column,
            byte,
        })
    }

    pub fn compose(&self, c: &DramCoord) -> u64 {
        let mut addr = 0u64;
        let mut shift = 0;
        for (v, bits) in [
            (c.byte, self.byte_offset_bits),
            (c.column, self.column_bits),
            (c.channel, self.channel_bits),
            (c.bank, self.bank_bits),
            (c.row, self.row_bits),
        ] {
            addr |= (v as u64 & mask(bits)) << shift;
            shift += bits;
        }
        addr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_address_is_all_zero() {
        let l = AddressLayout::default();
        assert_eq!(l.decompose(0).unwrap(), DramCoord::default());
    }

    #[test]
    fn default_layout_concatenation() {
        let l = AddressLayout::default();
        let c = DramCoord {
            channel: 1,
            bank: 3,
            row: 2,
            column: 5,
            byte: 0,
        };
        assert_eq!(l.compose(&c), 0x8E140);
        assert_eq!(l.decompose(0x8E140).unwrap(), c);
    }

    #[test]
    fn out_of_range_faults() {
        let l = AddressLayout::default();
        assert!(matches!(
            l.decompose(1 << 32),
            Err(SimError::AddressOutOfRange { .. })
        ));
    }

    #[test]
    fn coloring_feasibility() {
        let l = AddressLayout::default();
        assert!(l.validate_for_coloring().is_ok());
        assert_eq!(l.pages_per_row(), 2);
        let bad = AddressLayout {
            page_offset_bits: 14,
            ..l
        };
        assert!(bad.validate().is_ok());
        assert!(bad.validate_for_coloring().is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(addr in 0u64..(1 << 32)) {
            let l = AddressLayout::default();
            prop_assert_eq!(l.compose(&l.decompose(addr).unwrap()), addr);
        }
    }
}
