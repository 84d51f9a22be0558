//! In-memory FTL tables: map table, free-block bitmap, block and bank info,
//! buffer lookup table, allocation claim bitmap and sequence counter.

mod blocks;
mod lookup;
mod map;
mod snapshot;

use std::collections::HashMap;

pub use blocks::{BankAlloc, BankGuard, BankInfo, BlockTables, BlockTablesData};
pub use lookup::{AllocBufBitmap, BufferLookupTable, Claim, SequenceCounter};
pub use map::{EntryGuard, MapTable, UNMAPPED};
pub use snapshot::{FtlTables, SNAPSHOT_VERSION};

use crate::error::{Error, Result};
use crate::sim_flash::{FlashGeometry, Lpn, PageAddress, Ppn, SimFlashDevice};
use crate::spare::{BlockType, SpareMetadata};

pub struct FtlState {
    pub geometry: FlashGeometry,
    num_lpns: u32,
    pub map: MapTable,
    pub blocks: BlockTables,
    pub lookup: BufferLookupTable,
    pub claims: AllocBufBitmap,
    pub seq: SequenceCounter,
    bad: Vec<bool>,
}

impl FtlState {
    /// Fresh tables: everything unmapped, every good block free.
    pub fn new(geometry: FlashGeometry, num_lpns: u32, num_buffers: usize, bad_blocks: &[(u32, u32)]) -> Self {
        let banks = geometry.num_banks();
        let blocks = BlockTables::new(banks, geometry.blocks_per_bank, geometry.pages_per_block);
        let mut bad = vec![false; geometry.total_blocks() as usize];
        for &(b, k) in bad_blocks {
            bad[geometry.block_index(b, k)] = true;
            blocks.bank(b).lock().take(k);
        }
        FtlState {
            map: MapTable::new(num_lpns),
            blocks,
            lookup: BufferLookupTable::new(num_buffers),
            claims: AllocBufBitmap::new(num_lpns),
            seq: SequenceCounter::default(),
            bad,
            num_lpns,
            geometry,
        }
    }

    pub fn num_lpns(&self) -> u32 {
        self.num_lpns
    }

    pub fn check_lpn(&self, lpn: Lpn) -> Result<()> {
        if lpn.0 >= self.num_lpns {
            return Err(Error::OutOfRange(lpn.0 as u64));
        }
        Ok(())
    }

    pub fn is_bad(&self, bank: u32, block: u32) -> bool {
        self.bad[self.geometry.block_index(bank, block)]
    }

    pub fn bank(&self, bank: u32) -> &BankInfo {
        self.blocks.bank(bank)
    }

    pub fn map_lookup(&self, lpn: Lpn) -> Result<Option<Ppn>> {
        self.check_lpn(lpn)?;
        Ok(self.map.lookup(lpn))
    }

    pub fn mark_valid(&self, ppn: Ppn) {
        let a = self.geometry.address(ppn);
        self.blocks.mark_valid(a.bank, a.block, a.page);
    }

    pub fn mark_invalid(&self, ppn: Ppn) {
        let a = self.geometry.address(ppn);
        self.blocks.mark_invalid(a.bank, a.block, a.page);
    }

    /// Allocates the lowest free block of a bank, leaving `reserve` blocks
    /// untouched.
    pub fn alloc_free_block(&self, guard: &mut BankGuard<'_>, reserve: u32) -> Result<u32> {
        if guard.free_count() <= reserve {
            return Err(Error::Exhausted { bank: None });
        }
        let b = guard.lowest_free().ok_or(Error::Exhausted { bank: None })?;
        guard.take(b);
        Ok(b)
    }

    pub fn tables(&self) -> FtlTables {
        FtlTables {
            banks: self.geometry.num_banks(),
            blocks_per_bank: self.geometry.blocks_per_bank,
            pages_per_block: self.geometry.pages_per_block,
            map: self.map.raw(),
            blocks: self.blocks.export(),
            seq: self.seq.current(),
        }
    }

    /// Replaces all persistent tables. Requires external quiescence.
    pub fn load_tables(&self, t: &FtlTables) -> Result<()> {
        let g = &self.geometry;
        if t.banks != g.num_banks()
            || t.blocks_per_bank != g.blocks_per_bank
            || t.pages_per_block != g.pages_per_block
            || t.map.len() != self.num_lpns as usize
        {
            return Err(Error::Checkpoint("snapshot geometry does not match the card".into()));
        }
        self.map.load_raw(&t.map);
        self.blocks.import(&t.blocks);
        self.seq.set(t.seq);
        Ok(())
    }

    /// Stop-the-world consistency check of the tables against each other and
    /// against the flash contents. Requires external quiescence.
    pub fn audit(&self, dev: &SimFlashDevice) -> std::result::Result<(), String> {
        self.blocks.audit_counters()?;
        let g = &self.geometry;
        for b in 0..g.num_banks() {
            let alloc = self.bank(b).alloc_snapshot();
            for k in 0..g.blocks_per_bank {
                let written = dev.next_writable_page(b, k);
                if self.is_bad(b, k) {
                    if alloc.is_free(k) {
                        return Err(format!("bad block {b}:{k} is marked free"));
                    }
                    continue;
                }
                if alloc.is_free(k) && written != 0 {
                    return Err(format!("free block {b}:{k} has {written} programmed pages"));
                }
                if let Some(p) = self.blocks.valid_pages_of(b, k).into_iter().find(|&p| p >= written) {
                    return Err(format!("page {b}:{k}:{p} valid but never programmed"));
                }
                if alloc.current == Some(k) && alloc.next_page != written {
                    return Err(format!(
                        "bank {b}: next page {} but block {k} has {written} programmed",
                        alloc.next_page
                    ));
                }
            }
        }
        let mut images: HashMap<u32, u32> = HashMap::new();
        for (lpn, &raw) in self.map.raw().iter().enumerate() {
            if raw == UNMAPPED {
                continue;
            }
            if raw as u64 >= g.total_pages() {
                return Err(format!("lpn {lpn} maps past the card: {raw}"));
            }
            if let Some(other) = images.insert(raw, lpn as u32) {
                return Err(format!("lpns {other} and {lpn} share physical page {raw}"));
            }
            let a = g.address(Ppn(raw));
            if !self.blocks.page_valid(a.bank, a.block, a.page) {
                return Err(format!("lpn {lpn} maps to invalid page {a}"));
            }
            match dev.peek_spare(a).as_deref().and_then(SpareMetadata::decode) {
                Some(m) if m.block_type == BlockType::Data && m.lpn == lpn as u32 => {}
                other => return Err(format!("lpn {lpn} maps to {a} whose spare is {other:?}")),
            }
        }
        if images.len() as u64 != self.blocks.total_valid() {
            return Err(format!(
                "{} mapped pages but {} valid pages",
                images.len(),
                self.blocks.total_valid()
            ));
        }
        if let Some(l) = self.lookup.duplicate() {
            return Err(format!("{l} held by two buffer slots"));
        }
        Ok(())
    }

    /// Physical address of a page within the current block of `bank`.
    pub fn current_address(&self, guard: &BankGuard<'_>, bank: u32) -> Option<PageAddress> {
        guard.current.map(|k| PageAddress::new(bank, k, guard.next_page))
    }
}
