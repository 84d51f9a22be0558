use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DeviceError;
use crate::spare::SPARE_LEN;

/// Shape of the simulated card: interfaces (channels) of banks, banks of
/// erase blocks, blocks of sequentially programmed pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashGeometry {
    pub num_interfaces: u32,
    pub banks_per_interface: u32,
    pub blocks_per_bank: u32,
    pub pages_per_block: u32,
    /// Bytes per page, i.e. the DMA write size.
    pub page_size: u32,
    pub spare_per_page: u32,
    /// DMA read granularity; also the sector size exported by the FTL.
    pub read_unit: u32,
    pub erase_cycles_limit: u32,
}

/// Largest physical page number representable once the map entry's lock bit
/// is taken; the all-ones value is reserved for "unmapped".
pub const MAX_PHYSICAL_PAGES: u64 = 0x7FFF_FFFF;

impl FlashGeometry {
    /// The 512GB card: 4 interfaces x 16 banks, 32KB pages, 2MB erase blocks.
    pub fn full_512g() -> Self {
        FlashGeometry {
            num_interfaces: 4,
            banks_per_interface: 16,
            blocks_per_bank: 4096,
            pages_per_block: 64,
            page_size: 32 * 1024,
            spare_per_page: 512,
            read_unit: 4096,
            erase_cycles_limit: 100_000,
        }
    }

    /// The 8GB garbage-collection profile (64 blocks per bank) with the full bank count.
    pub fn full_8g() -> Self {
        FlashGeometry { blocks_per_bank: 64, ..Self::full_512g() }
    }

    /// Desk-scale 8-bank card used for the GC experiments. Pages shrink from
    /// 32KB to 4KB and sectors from 4KB to 512B so an aged image fits in RAM;
    /// 8 sectors per page and 64 pages per block are kept.
    pub fn desk_8bank() -> Self {
        FlashGeometry {
            num_interfaces: 2,
            banks_per_interface: 4,
            blocks_per_bank: 64,
            pages_per_block: 64,
            page_size: 4096,
            spare_per_page: 64,
            read_unit: 512,
            erase_cycles_limit: 100_000,
        }
    }

    /// Desk-scale 64-bank card (4 interfaces x 16 banks) for queue scaling.
    pub fn desk_64bank() -> Self {
        FlashGeometry {
            num_interfaces: 4,
            banks_per_interface: 16,
            blocks_per_bank: 32,
            pages_per_block: 16,
            page_size: 4096,
            spare_per_page: 64,
            read_unit: 512,
            erase_cycles_limit: 100_000,
        }
    }

    /// Small card for unit tests.
    pub fn tiny() -> Self {
        FlashGeometry {
            num_interfaces: 1,
            banks_per_interface: 2,
            blocks_per_bank: 8,
            pages_per_block: 8,
            page_size: 4096,
            spare_per_page: 64,
            read_unit: 512,
            erase_cycles_limit: 100_000,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let err = |m: &str| Err(DeviceError::Config(m.to_string()));
        if self.num_interfaces == 0
            || self.banks_per_interface == 0
            || self.blocks_per_bank == 0
            || self.pages_per_block == 0
        {
            return err("geometry counts must be positive");
        }
        if self.read_unit == 0 || self.page_size == 0 || self.page_size % self.read_unit != 0 {
            return err("page_size must be a positive multiple of read_unit");
        }
        if self.sectors_per_page() > 64 {
            return err("at most 64 read units per page are supported");
        }
        if (self.spare_per_page as usize) < SPARE_LEN {
            return err("spare_per_page too small for block type, lpn, sequence and checksum");
        }
        if self.total_pages() > MAX_PHYSICAL_PAGES {
            return err("too many physical pages for 31-bit page numbers");
        }
        Ok(())
    }

    pub fn num_banks(&self) -> u32 {
        self.num_interfaces * self.banks_per_interface
    }

    pub fn total_blocks(&self) -> u64 {
        self.num_banks() as u64 * self.blocks_per_bank as u64
    }

    pub fn total_pages(&self) -> u64 {
        self.total_blocks() * self.pages_per_block as u64
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_pages() * self.page_size as u64
    }

    pub fn sectors_per_page(&self) -> u32 {
        self.page_size / self.read_unit
    }

    pub fn interface_of(&self, bank: u32) -> u32 {
        bank / self.banks_per_interface
    }

    /// Read queues per interface; each covers two consecutive banks.
    pub fn read_queues_per_interface(&self) -> u32 {
        self.banks_per_interface.div_ceil(2)
    }

    pub fn contains(&self, addr: PageAddress) -> bool {
        addr.bank < self.num_banks()
            && addr.block < self.blocks_per_bank
            && addr.page < self.pages_per_block
    }

    /// Global index of a block across all banks.
    pub fn block_index(&self, bank: u32, block: u32) -> usize {
        bank as usize * self.blocks_per_bank as usize + block as usize
    }

    pub fn ppn(&self, addr: PageAddress) -> Ppn {
        let idx = self.block_index(addr.bank, addr.block) as u64 * self.pages_per_block as u64
            + addr.page as u64;
        Ppn(idx as u32)
    }

    pub fn address(&self, ppn: Ppn) -> PageAddress {
        let ppb = self.pages_per_block;
        let block_global = ppn.0 / ppb;
        PageAddress {
            bank: block_global / self.blocks_per_bank,
            block: block_global % self.blocks_per_bank,
            page: ppn.0 % ppb,
        }
    }
}

/// Physical coordinates of one flash page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageAddress {
    pub bank: u32,
    pub block: u32,
    pub page: u32,
}

impl PageAddress {
    pub fn new(bank: u32, block: u32, page: u32) -> Self {
        PageAddress { bank, block, page }
    }
}

impl fmt::Display for PageAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.bank, self.block, self.page)
    }
}

/// Physical page number: a flattened [`PageAddress`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ppn(pub u32);

/// Logical page number: one flash page worth of host-visible sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Lpn(pub u32);

impl fmt::Display for Lpn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lpn{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_profile_shape() {
        let g = FlashGeometry::full_512g();
        g.validate().unwrap();
        assert_eq!(g.num_banks(), 64);
        assert_eq!(g.capacity_bytes(), 512 * 1024 * 1024 * 1024);
        assert_eq!(g.sectors_per_page(), 8);
        assert_eq!(g.pages_per_block as u64 * g.page_size as u64, 2 * 1024 * 1024);
        assert_eq!(g.total_pages(), 16 * 1024 * 1024);
    }

    #[test]
    fn ppn_round_trips() {
        let g = FlashGeometry::desk_8bank();
        for &(b, k, p) in &[(0, 0, 0), (7, 63, 63), (3, 17, 5)] {
            let a = PageAddress::new(b, k, p);
            assert_eq!(g.address(g.ppn(a)), a);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut g = FlashGeometry::tiny();
        g.read_unit = 3000;
        assert!(g.validate().is_err());
        let mut g = FlashGeometry::tiny();
        g.spare_per_page = 8;
        assert!(g.validate().is_err());
        let mut g = FlashGeometry::tiny();
        g.blocks_per_bank = 0;
        assert!(g.validate().is_err());
    }
}
