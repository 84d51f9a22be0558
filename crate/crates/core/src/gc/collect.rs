use std::sync::atomic::Ordering;

use crate::error::{Error, Result};
use crate::ftl::Ftl;
use crate::sim_flash::{Lpn, PageAddress};
use crate::spare::{BlockType, SpareMetadata};
use crate::time::SimTime;

use super::GcEventKind;

/// A block collection in progress. Each [`Ftl::collect_step`] copies one
/// valid page or, once none are left, erases the block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collection {
    pub bank: u32,
    pub victim: u32,
    next_page: u32,
    pub copies: u32,
}

impl Ftl {
    /// Occupied, good, non-current block of `bank` with the fewest valid
    /// pages, at most `max_valid`. Ties go to the lowest block index.
    pub fn select_victim(&self, bank: u32, max_valid: u32) -> Option<u32> {
        let alloc = self.state.bank(bank).alloc_snapshot();
        (0..self.geometry().blocks_per_bank)
            .filter(|&k| !alloc.is_free(k) && alloc.current != Some(k) && !self.state.is_bad(bank, k))
            .map(|k| (self.state.blocks.block_valid(bank, k), k))
            .filter(|&(v, _)| v <= max_valid)
            .min()
            .map(|(_, k)| k)
    }

    /// Starts collecting `victim`. Fails with [`Error::GcNoRoom`] when the
    /// bank cannot hold its valid pages. The caller owns the bank's GC
    /// claim.
    pub fn begin_collection(&self, bank: u32, victim: u32) -> Result<Collection> {
        let ppb = self.geometry().pages_per_block;
        let guard = self.state.bank(bank).lock();
        let room = guard.current.map_or(0, |_| ppb - guard.next_page) + guard.free_count() * ppb;
        let needed = self.state.blocks.block_valid(bank, victim);
        if needed > room {
            return Err(Error::GcNoRoom { bank, block: victim, needed, available: room });
        }
        Ok(Collection { bank, victim, next_page: 0, copies: 0 })
    }

    /// Advances a collection by one device operation starting at `now`.
    /// Returns the completion time and whether the block has been erased.
    pub fn collect_step(&self, c: &mut Collection, now: SimTime) -> Result<(SimTime, bool)> {
        let g = self.geometry();
        let ppb = g.pages_per_block;
        let (bank, victim) = (c.bank, c.victim);
        while c.next_page < ppb {
            let page = c.next_page;
            c.next_page += 1;
            if !self.state.blocks.page_valid(bank, victim, page) {
                continue;
            }
            let addr = PageAddress::new(bank, victim, page);
            let out = self.dev.read_full(addr, now)?;
            let meta = out
                .spare
                .as_deref()
                .and_then(SpareMetadata::decode)
                .filter(|m| m.block_type == BlockType::Data)
                .ok_or_else(|| Error::Audit(format!("valid page {addr} has no data spare")))?;
            let lpn = Lpn(meta.lpn);
            let old = g.ppn(addr);
            let entry = self.state.map.lock(lpn);
            if entry.get() != Some(old) {
                // overwritten since the valid bit was read
                return Ok((out.completion.completed_at, false));
            }
            let at = out.completion.completed_at;
            let (ppn, done) =
                self.program_page(bank, BlockType::Data, lpn.0, &out.data, 0, at).map_err(|e| match e {
                    Error::Exhausted { .. } => Error::GcNoRoom {
                        bank,
                        block: victim,
                        needed: self.state.blocks.block_valid(bank, victim),
                        available: 0,
                    },
                    e => e,
                })?;
            entry.update(ppn);
            self.state.mark_valid(ppn);
            self.state.mark_invalid(old);
            drop(entry);
            c.copies += 1;
            self.gcc.valid_pages_copied.fetch_add(1, Ordering::Relaxed);
            self.event(now, GcEventKind::Copy { lpn: lpn.0 }, Some(bank), Some(victim));
            return Ok((done, false));
        }
        let mut guard = self.state.bank(bank).lock();
        let left = self.state.blocks.block_valid(bank, victim);
        if left != 0 {
            return Err(Error::Audit(format!("block {bank}:{victim} still has {left} valid pages at erase")));
        }
        let done = self.dev.erase_block(bank, victim, now)?;
        self.state.blocks.reset_block(bank, victim);
        guard.release(victim);
        drop(guard);
        self.gcc.blocks_collected.fetch_add(1, Ordering::Relaxed);
        self.gcc.erases_performed.fetch_add(1, Ordering::Relaxed);
        self.event(now, GcEventKind::Erase, Some(bank), Some(victim));
        Ok((done.completed_at, true))
    }

    /// Collects one block to completion: copies its valid pages within the
    /// bank, then erases it and returns it to the free bitmap.
    pub fn collect_block(&self, bank: u32, victim: u32, now: SimTime) -> Result<SimTime> {
        let mut c = self.begin_collection(bank, victim)?;
        let mut t = now;
        loop {
            let (done, erased) = self.collect_step(&mut c, t)?;
            t = done;
            if erased {
                return Ok(t);
            }
        }
    }

    /// Inline collection before a host write to `bank`: collects victims
    /// admitted by the bank's current level until the bank leaves the
    /// highest level it breached on entry or no victim is left. Bounded by
    /// the configured round limit.
    pub fn npgc_before_write(&self, bank: u32, now: SimTime) -> Result<SimTime> {
        let levels = &self.cfg.levels;
        let info = self.state.bank(bank);
        let free = info.free_blocks();
        let Some(entry_level) = levels.current_level(free) else { return Ok(now) };
        if !info.try_claim_gc() {
            return Ok(now);
        }
        let target = levels.levels[entry_level].free_blocks + 1;
        let rounds = self.cfg.gc.max_npgc_rounds.unwrap_or(target.saturating_sub(free));
        let mut t = now;
        let mut res = Ok(());
        for _ in 0..rounds {
            let free = info.free_blocks();
            if free >= target {
                break;
            }
            let Some(level) = levels.current_level(free) else { break };
            let Some(victim) = self.select_victim(bank, levels.levels[level].valid_pages) else { break };
            self.event(
                t,
                GcEventKind::VictimSelected { valid: self.state.blocks.block_valid(bank, victim), level: level as u32 },
                Some(bank),
                Some(victim),
            );
            match self.collect_block(bank, victim, t) {
                Ok(done) => {
                    t = done;
                    self.gcc.npgc_collections.fetch_add(1, Ordering::Relaxed);
                }
                Err(Error::GcNoRoom { .. }) => break,
                Err(e) => {
                    res = Err(e);
                    break;
                }
            }
        }
        info.release_gc();
        res.map(|_| t)
    }

    /// Last-resort collection when no bank can take a host page: collects
    /// the block with the fewest valid pages anywhere on the card, if that
    /// gains any room. `Ok(None)` when nothing can be reclaimed.
    pub(crate) fn emergency_gc(&self, now: SimTime) -> Result<Option<SimTime>> {
        let ppb = self.geometry().pages_per_block;
        let mut cands: Vec<(u32, u32, u32)> = (0..self.geometry().num_banks())
            .filter_map(|b| {
                self.select_victim(b, ppb - 1).map(|k| (self.state.blocks.block_valid(b, k), b, k))
            })
            .collect();
        cands.sort_unstable();
        for (valid, bank, victim) in cands {
            let info = self.state.bank(bank);
            if !info.try_claim_gc() {
                continue;
            }
            let res = self.collect_block(bank, victim, now);
            info.release_gc();
            match res {
                Ok(t) => {
                    self.gcc.emergency_collections.fetch_add(1, Ordering::Relaxed);
                    self.event(now, GcEventKind::Emergency { valid }, Some(bank), Some(victim));
                    return Ok(Some(t));
                }
                Err(Error::GcNoRoom { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    /// Collects, on every bank, each block with at most `max_valid` valid
    /// pages that fits in the bank's remaining room. Used by tests and the
    /// CLI to exercise collection at a chosen level.
    pub fn force_gc(&self, max_valid: u32, now: SimTime) -> Result<SimTime> {
        let mut t = now;
        let bpb = self.geometry().blocks_per_bank;
        for bank in 0..self.geometry().num_banks() {
            let info = self.state.bank(bank);
            if !info.try_claim_gc() {
                continue;
            }
            let mut res = Ok(());
            let mut tb = now;
            for _ in 0..2 * bpb {
                let Some(victim) = self.select_victim(bank, max_valid) else { break };
                match self.collect_block(bank, victim, tb) {
                    Ok(done) => {
                        tb = done;
                        t = t.max(done);
                    }
                    Err(Error::GcNoRoom { .. }) => break,
                    Err(e) => {
                        res = Err(e);
                        break;
                    }
                }
            }
            info.release_gc();
            res?;
        }
        Ok(t)
    }

    pub(crate) fn event(&self, at: SimTime, kind: GcEventKind, bank: Option<u32>, block: Option<u32>) {
        if let Some(log) = &self.events {
            log.push(at, kind, bank, block);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftl::testing::{block_with, ftl_with, geometry, page};

    #[test]
    fn victim_is_the_emptiest_block_within_the_limit() {
        let f = ftl_with(geometry(), |_| {});
        let mut l = 0;
        let blocks: Vec<u32> = [3, 1, 5].iter().map(|&v| block_with(&f, 0, v, &mut l)).collect();
        assert_eq!(f.select_victim(0, 0), None);
        assert_eq!(f.select_victim(0, 4), Some(blocks[1]));
        let zero = block_with(&f, 0, 0, &mut l);
        assert_eq!(f.select_victim(0, 0), Some(zero));
        assert_eq!(f.select_victim(1, 8), None);
    }

    #[test]
    fn collecting_copies_valid_pages_within_the_bank() {
        let f = ftl_with(geometry(), |_| {});
        let mut l = 0;
        let empty = block_with(&f, 0, 0, &mut l);
        let three = block_with(&f, 0, 3, &mut l);
        let free = f.state.bank(0).free_blocks();
        f.collect_block(0, empty, SimTime::ZERO).unwrap();
        let s = f.stats();
        assert_eq!((s.gc.valid_pages_copied, s.gc.erases_performed), (0, 1));
        assert_eq!(f.state.bank(0).free_blocks(), free + 1);

        let t = f.collect_block(0, three, SimTime::ZERO).unwrap();
        let s = f.stats();
        assert_eq!((s.gc.valid_pages_copied, s.gc.erases_performed, s.device.erases), (3, 2, 2));
        for lpn in 0..3 {
            let ppn = f.state.map.lookup(Lpn(lpn)).unwrap();
            let a = f.geometry().address(ppn);
            assert_eq!(a.bank, 0);
            assert_ne!(a.block, three);
            let (d, _) = f.read_sector(lpn as u64 * 8 + 2, t).unwrap();
            assert_eq!(d, page(lpn)[1024..1536]);
        }
        f.audit().unwrap();
    }

    #[test]
    fn npgc_does_nothing_above_the_thresholds() {
        let f = ftl_with(geometry(), |c| c.gc.policy = crate::gc::GcPolicy::Npgc);
        let mut l = 0;
        for _ in 0..4 {
            block_with(&f, 0, 0, &mut l);
        }
        assert_eq!(f.npgc_before_write(0, SimTime::ZERO).unwrap(), SimTime::ZERO);
        assert_eq!(f.stats().device.erases, 0);
    }

    #[test]
    fn npgc_erases_empty_blocks_until_the_bank_leaves_its_level() {
        let f = ftl_with(geometry(), |c| c.gc.policy = crate::gc::GcPolicy::Npgc);
        let mut l = 0;
        for v in [0, 0, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8] {
            block_with(&f, 0, v, &mut l);
        }
        // 3 free: level 0, left once more than 4 are free
        assert_eq!(f.state.bank(0).free_blocks(), 3);
        f.npgc_before_write(0, SimTime::ZERO).unwrap();
        assert_eq!(f.stats().device.erases, 2);
        assert_eq!(f.state.bank(0).free_blocks(), 5);
        assert!(!f.state.bank(0).gc_active());
    }

    #[test]
    fn npgc_takes_partly_valid_victims_only_at_their_level() {
        let f = ftl_with(geometry(), |c| c.gc.policy = crate::gc::GcPolicy::Npgc);
        let mut l = 0;
        for v in [1, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8] {
            block_with(&f, 0, v, &mut l);
        }
        // level 0 admits only empty blocks
        f.npgc_before_write(0, SimTime::ZERO).unwrap();
        assert_eq!(f.stats().device.erases, 0);
        block_with(&f, 0, 8, &mut l);
        // 2 free: level 1 admits the block with one valid page
        assert_eq!(f.state.bank(0).free_blocks(), 2);
        f.npgc_before_write(0, SimTime::ZERO).unwrap();
        let s = f.stats();
        assert_eq!((s.device.erases, s.gc.valid_pages_copied), (1, 1));
        f.audit().unwrap();
    }

    #[test]
    fn force_gc_collects_every_admitted_block() {
        let f = ftl_with(geometry(), |_| {});
        let mut l = 0;
        for bank in 0..2 {
            for v in [0, 2, 2, 6] {
                block_with(&f, bank, v, &mut l);
            }
        }
        f.force_gc(2, SimTime::ZERO).unwrap();
        let s = f.stats();
        assert_eq!((s.gc.blocks_collected, s.gc.valid_pages_copied), (6, 8));
        f.audit().unwrap();
    }
}
