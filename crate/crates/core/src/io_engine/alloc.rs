//! Physical page allocation: bank choice and sequential programming of a
//! bank's current-writing block.

use std::sync::atomic::Ordering;

use rand::Rng;

use crate::error::{DeviceError, Error, Result};
use crate::ftl::Ftl;
use crate::sim_flash::{Lpn, Ppn};
use crate::spare::{BlockType, SpareMetadata};
use crate::time::SimTime;

impl Ftl {
    /// True when host writes may still land in `bank` without touching its
    /// collector reserve.
    pub(crate) fn bank_has_space(&self, bank: u32) -> bool {
        let g = self.state.bank(bank).lock();
        g.current.is_some() || g.free_count() > self.cfg.gc.reserve_blocks
    }

    /// Chooses the bank for the next host page. Prefers, in order: a bank
    /// that is idle, not being collected and not reserved for GC; any bank
    /// not being collected or reserved; any bank with space. When no bank
    /// has space, collects the cheapest block on the card inline and tries
    /// again. Returns the bank and the time after any inline work.
    pub fn select_bank(&self, now: SimTime) -> Result<(u32, SimTime)> {
        let n = self.geometry().num_banks();
        let mut t = now;
        loop {
            let start = self.cursor.fetch_add(1, Ordering::Relaxed) % n;
            let order = (0..n).map(|i| (start + i) % n);
            let usable = |b: u32| {
                let info = self.state.bank(b);
                !info.gc_active() && !info.exclusive() && self.bank_has_space(b)
            };
            if let Some(b) = order.clone().find(|&b| usable(b) && self.dev.bank_idle_at(b, t)) {
                return Ok((b, t));
            }
            if let Some(b) = order.clone().find(|&b| usable(b)) {
                return Ok((b, t));
            }
            let spacious: Vec<u32> = order.filter(|&b| self.bank_has_space(b)).collect();
            if !spacious.is_empty() {
                let i = self.rng.lock().gen_range(0..spacious.len());
                return Ok((spacious[i], t));
            }
            match self.emergency_gc(t)? {
                Some(done) => t = done,
                None => return Err(Error::Exhausted { bank: None }),
            }
        }
    }

    /// Programs a host page into `bank`, falling back to another bank if
    /// this one filled up in the meantime.
    pub(crate) fn program_user_page(&self, bank: u32, lpn: Lpn, data: &[u8], at: SimTime) -> Result<(Ppn, SimTime)> {
        let reserve = self.cfg.gc.reserve_blocks;
        match self.program_page(bank, BlockType::Data, lpn.0, data, reserve, at) {
            Err(Error::Exhausted { .. }) => {
                let (b, t) = self.select_bank(at)?;
                self.program_page(b, BlockType::Data, lpn.0, data, reserve, t)
            }
            r => r,
        }
    }

    /// Programs the next page of the current-writing block of `bank`,
    /// opening a new block when there is none. `reserve` free blocks are
    /// left untouched. The bank lock is held across the device write.
    pub(crate) fn program_page(
        &self,
        bank: u32,
        block_type: BlockType,
        lpn: u32,
        data: &[u8],
        reserve: u32,
        at: SimTime,
    ) -> Result<(Ppn, SimTime)> {
        let g = self.geometry();
        let mut guard = self.state.bank(bank).lock();
        if guard.current.is_none() {
            let b = self
                .state
                .alloc_free_block(&mut guard, reserve)
                .map_err(|_| Error::Exhausted { bank: Some(bank) })?;
            guard.set_current(Some(b), 0);
            self.io.blocks_opened.fetch_add(1, Ordering::Relaxed);
        }
        let addr = self.state.current_address(&guard, bank).expect("current block set");
        let seq = self.state.seq.next();
        let spare = SpareMetadata::new(block_type, lpn, seq, data).encode();
        match self.dev.write_page(addr, data, &spare, at) {
            Ok(c) => {
                guard.advance_page(g.pages_per_block);
                Ok((g.ppn(addr), c.completed_at))
            }
            Err(DeviceError::Halted) => {
                // the torn page still occupies its slot on the card
                guard.advance_page(g.pages_per_block);
                Err(DeviceError::Halted.into())
            }
            Err(e) => Err(e.into()),
        }
    }
}
