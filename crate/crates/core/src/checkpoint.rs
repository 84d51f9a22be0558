//! Checkpoints of the FTL tables as a linked chain of flash blocks, and the
//! page-level recovery scan used when no checkpoint can be loaded.
//!
//! Page 0 of every chain block starts with a header:
//!
//! | bytes | field |
//! |-------|-------|
//! | 0..8  | magic `b"PFTLCKPT"` |
//! | 8..12 | version |
//! | 12..20 | sequence counter of the saved tables |
//! | 20..24 | position in the chain (head is 0) |
//! | 24..28 | bank of the next block, `u32::MAX` at the tail |
//! | 28..32 | block of the next block, `u32::MAX` at the tail |
//! | 32..36 | payload bytes held by this block |
//! | 36..40 | CRC-32 of bytes 0..36 and the payload |
//!
//! The payload (the encoded [`FtlTables`]) follows the header and continues
//! through the next pages of the block. Every chain page carries a
//! checkpoint-type spare whose LPN field is the chain position. The head
//! block lies within the first or last `window_k` blocks of some bank, so a
//! loader only probes those.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::Ordering;

use crate::error::{Error, Result};
use crate::ftl::Ftl;
use crate::ftl_state::{BlockTables, FtlTables, UNMAPPED};
use crate::sim_flash::{PageAddress, Ppn};
use crate::spare::{BlockType, SpareMetadata, LPN_NONE};
use crate::time::SimTime;

const MAGIC: &[u8; 8] = b"PFTLCKPT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 40;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
struct ChainHeader {
    save_seq: u64,
    position: u32,
    next: Option<(u32, u32)>,
    payload_len: u32,
}

impl ChainHeader {
    fn encode(&self, payload: &[u8]) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..8].copy_from_slice(MAGIC);
        h[8..12].copy_from_slice(&VERSION.to_le_bytes());
        h[12..20].copy_from_slice(&self.save_seq.to_le_bytes());
        h[20..24].copy_from_slice(&self.position.to_le_bytes());
        let (nb, nk) = self.next.unwrap_or((NONE, NONE));
        h[24..28].copy_from_slice(&nb.to_le_bytes());
        h[28..32].copy_from_slice(&nk.to_le_bytes());
        h[32..36].copy_from_slice(&self.payload_len.to_le_bytes());
        let mut crc = crc32fast::Hasher::new();
        crc.update(&h[..36]);
        crc.update(payload);
        h[36..40].copy_from_slice(&crc.finalize().to_le_bytes());
        h
    }

    /// Parses a header; the CRC is checked separately once the payload is
    /// read.
    fn decode(b: &[u8]) -> Option<(ChainHeader, u32)> {
        if b.len() < HEADER_LEN || &b[0..8] != MAGIC {
            return None;
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        if u32_at(8) != VERSION {
            return None;
        }
        let (nb, nk) = (u32_at(24), u32_at(28));
        Some((
            ChainHeader {
                save_seq: u64::from_le_bytes(b[12..20].try_into().unwrap()),
                position: u32_at(20),
                next: (nb != NONE).then_some((nb, nk)),
                payload_len: u32_at(32),
            },
            u32_at(36),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaveReport {
    pub head: PageAddress,
    /// Chain blocks in order, as (bank, block).
    pub blocks: Vec<(u32, u32)>,
    pub pages: u32,
    /// Window blocks emptied to make room for the head.
    pub relocations: u32,
    pub done: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub head: PageAddress,
    pub chain_blocks: u32,
    pub chain_pages: u32,
    /// Window pages probed for a chain head.
    pub probes: u32,
    pub done: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadOutcome {
    Loaded(LoadReport),
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanReport {
    pub pages_read: u64,
    pub mapped_lpns: u64,
    pub torn_pages: u64,
    pub checkpoint_blocks_erased: u32,
    pub done: SimTime,
}

impl Ftl {
    fn window(&self) -> Vec<u32> {
        let bpb = self.geometry().blocks_per_bank;
        let k = self.cfg.checkpoint.window_k.min(bpb);
        let set: BTreeSet<u32> = (0..k).chain(bpb - k..bpb).collect();
        set.into_iter().collect()
    }

    /// Writes the tables to a new checkpoint chain. Requires quiescence and
    /// empty buffers. A previous chain written by this engine is erased
    /// first.
    pub fn checkpoint_save(&self, now: SimTime) -> Result<SaveReport> {
        if self.pool.class_counts().0 != self.pool.len() {
            return Err(Error::Checkpoint("buffers must be flushed before a checkpoint".into()));
        }
        let mut t = self.erase_previous_chain(now)?;
        let g = self.geometry().clone();
        let window = self.window();
        let mut relocations = 0;
        let free_window = |ftl: &Ftl| {
            (0..g.num_banks()).find_map(|b| ftl.state.bank(b).lock().first_free_in(window.iter().copied()).map(|k| (b, k)))
        };
        if free_window(self).is_none() {
            t = self.relocate_window_block(&window, t)?;
            relocations += 1;
        }
        let tables = self.state.tables();
        let payload = tables.encode();
        let cap = (g.pages_per_block * g.page_size) as usize - HEADER_LEN;
        let nblocks = payload.len().div_ceil(cap).max(1);

        let (hb, hk) = free_window(self).ok_or_else(|| Error::Checkpoint("no free window block".into()))?;
        let mut blocks = vec![(hb, hk)];
        self.state.bank(hb).lock().take(hk);
        let mut bank = hb;
        while blocks.len() < nblocks {
            let found = (1..=g.num_banks()).map(|i| (bank + i) % g.num_banks()).find_map(|b| {
                let mut guard = self.state.bank(b).lock();
                let k = guard.lowest_free()?;
                guard.take(k);
                Some((b, k))
            });
            match found {
                Some(bk) => {
                    bank = bk.0;
                    blocks.push(bk);
                }
                None => {
                    for &(b, k) in &blocks {
                        self.state.bank(b).lock().release(k);
                    }
                    return Err(Error::Checkpoint("not enough free blocks for the checkpoint".into()));
                }
            }
        }

        let mut done = t;
        let mut pages = 0;
        for (i, chunk) in payload.chunks(cap).chain(payload.is_empty().then_some(&[][..])).enumerate() {
            let (b, k) = blocks[i];
            let hdr = ChainHeader {
                save_seq: tables.seq,
                position: i as u32,
                next: blocks.get(i + 1).copied(),
                payload_len: chunk.len() as u32,
            };
            let mut image = hdr.encode(chunk).to_vec();
            image.extend_from_slice(chunk);
            // blocks of the chain are written in parallel across banks
            let mut tb = t;
            for (p, data) in image.chunks(g.page_size as usize).enumerate() {
                let mut page = data.to_vec();
                page.resize(g.page_size as usize, 0);
                let spare = SpareMetadata::new(BlockType::Checkpoint, i as u32, self.state.seq.next(), &page).encode();
                tb = self.dev.write_page(PageAddress::new(b, k, p as u32), &page, &spare, tb)?.completed_at;
                pages += 1;
            }
            done = done.max(tb);
        }
        self.io.checkpoint_pages.fetch_add(pages as u64, Ordering::Relaxed);
        *self.last_chain.lock() = blocks.clone();
        Ok(SaveReport { head: PageAddress::new(hb, hk, 0), blocks, pages, relocations, done })
    }

    /// Erases the chain of an earlier save if its blocks are still as written.
    fn erase_previous_chain(&self, now: SimTime) -> Result<SimTime> {
        let chain = std::mem::take(&mut *self.last_chain.lock());
        let mut t = now;
        for (b, k) in chain {
            let mut guard = self.state.bank(b).lock();
            if guard.is_free(k) || guard.current == Some(k) || self.state.blocks.block_valid(b, k) != 0 {
                continue;
            }
            let (spare, _) = self.dev.read_spare(PageAddress::new(b, k, 0), t)?;
            if SpareMetadata::decode(&spare).map(|m| m.block_type) != Some(BlockType::Checkpoint) {
                continue;
            }
            t = t.max(self.dev.erase_block(b, k, now)?.completed_at);
            self.state.blocks.reset_block(b, k);
            guard.release(k);
        }
        Ok(t)
    }

    /// Frees one window block by collecting the occupied window block with
    /// the fewest valid pages.
    fn relocate_window_block(&self, window: &[u32], now: SimTime) -> Result<SimTime> {
        let mut cands = Vec::new();
        for b in 0..self.geometry().num_banks() {
            let alloc = self.state.bank(b).alloc_snapshot();
            for &k in window {
                if !alloc.is_free(k) && alloc.current != Some(k) && !self.state.is_bad(b, k) {
                    cands.push((self.state.blocks.block_valid(b, k), b, k));
                }
            }
        }
        cands.sort_unstable();
        for (_, b, k) in cands {
            let info = self.state.bank(b);
            if !info.try_claim_gc() {
                continue;
            }
            let res = self.collect_block(b, k, now);
            info.release_gc();
            match res {
                Ok(t) => return Ok(t),
                Err(Error::GcNoRoom { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Checkpoint("no window block can be freed".into()))
    }

    /// Looks for the newest checkpoint chain by probing the window blocks of
    /// every bank, restores the tables from it and erases the chain. Bank
    /// probes run in parallel on the simulated clock. Requires fresh state.
    pub fn checkpoint_load(&self, now: SimTime) -> Result<LoadOutcome> {
        let g = self.geometry().clone();
        let window = self.window();
        let mut probes = 0;
        let mut t_probe = now;
        let mut head: Option<(u64, u32, u32)> = None;
        for b in 0..g.num_banks() {
            let mut tb = now;
            for &k in &window {
                if self.state.is_bad(b, k) {
                    continue;
                }
                let (spare, done) = self.dev.read_spare(PageAddress::new(b, k, 0), tb)?;
                tb = done;
                probes += 1;
                if let Some(m) = SpareMetadata::decode(&spare) {
                    if m.block_type == BlockType::Checkpoint && m.lpn == 0 && head.map_or(true, |h| m.seq > h.0) {
                        head = Some((m.seq, b, k));
                    }
                }
            }
            t_probe = t_probe.max(tb);
        }
        let Some((_, hb, hk)) = head else { return Ok(LoadOutcome::NotFound) };

        let mut t = t_probe;
        let mut payload = Vec::new();
        let mut chain = Vec::new();
        let mut visited = BTreeSet::new();
        let mut max_seq = 0;
        let mut chain_pages = 0;
        let mut cur = Some((hb, hk));
        let mut save_seq = None;
        while let Some((b, k)) = cur {
            if !visited.insert((b, k)) || b >= g.num_banks() || k >= g.blocks_per_bank {
                log::warn!("checkpoint chain is malformed at {b}:{k}");
                return Ok(LoadOutcome::NotFound);
            }
            let first = self.dev.read_full(PageAddress::new(b, k, 0), t)?;
            t = first.completion.completed_at;
            chain_pages += 1;
            let Some((hdr, crc)) = ChainHeader::decode(&first.data) else {
                log::warn!("checkpoint block {b}:{k} has no valid header");
                return Ok(LoadOutcome::NotFound);
            };
            if hdr.position != chain.len() as u32 || *save_seq.get_or_insert(hdr.save_seq) != hdr.save_seq {
                log::warn!("checkpoint block {b}:{k} is out of order");
                return Ok(LoadOutcome::NotFound);
            }
            let total = HEADER_LEN + hdr.payload_len as usize;
            if total > (g.pages_per_block * g.page_size) as usize {
                return Ok(LoadOutcome::NotFound);
            }
            let npages = total.div_ceil(g.page_size as usize) as u32;
            let mut image = first.data;
            max_seq = max_seq.max(first.spare.as_deref().and_then(SpareMetadata::decode).map_or(0, |m| m.seq));
            for p in 1..npages {
                let out = self.dev.read_full(PageAddress::new(b, k, p), t)?;
                t = out.completion.completed_at;
                chain_pages += 1;
                max_seq = max_seq.max(out.spare.as_deref().and_then(SpareMetadata::decode).map_or(0, |m| m.seq));
                image.extend_from_slice(&out.data);
            }
            let body = &image[HEADER_LEN..total];
            if hdr.encode(body)[36..40] != crc.to_le_bytes() {
                log::warn!("checkpoint block {b}:{k} fails its checksum");
                return Ok(LoadOutcome::NotFound);
            }
            payload.extend_from_slice(body);
            chain.push((b, k));
            cur = hdr.next;
        }
        let tables = match FtlTables::decode(&payload) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("checkpoint payload rejected: {e}");
                return Ok(LoadOutcome::NotFound);
            }
        };
        if let Err(e) = self.state.load_tables(&tables) {
            log::warn!("checkpoint does not fit this card: {e}");
            return Ok(LoadOutcome::NotFound);
        }
        self.state.seq.observe(max_seq);
        // the saved tables list the chain blocks as free; make that true
        let mut done = t;
        for &(b, k) in &chain {
            done = done.max(self.dev.erase_block(b, k, t)?.completed_at);
        }
        Ok(LoadOutcome::Loaded(LoadReport {
            head: PageAddress::new(hb, hk, 0),
            chain_blocks: chain.len() as u32,
            chain_pages,
            probes,
            done,
        }))
    }

    /// Rebuilds every table from the spare areas of all programmed pages.
    /// Each logical page maps to its copy with the highest sequence number;
    /// torn pages are skipped; checkpoint blocks are erased. Banks are
    /// scanned in parallel on the simulated clock. Requires fresh state.
    pub fn recovery_scan(&self, now: SimTime) -> Result<ScanReport> {
        let g = self.geometry().clone();
        let ppb = g.pages_per_block;
        let tables = BlockTables::new(g.num_banks(), g.blocks_per_bank, ppb);
        let mut best: HashMap<u32, (u64, Ppn)> = HashMap::new();
        let mut max_seq = 0;
        let mut pages_read = 0;
        let mut torn = 0;
        let mut erased = 0;
        let mut done = now;
        for b in 0..g.num_banks() {
            let mut tb = now;
            // (highest seq, block, written pages) of partially written data blocks
            let mut partial: Option<(u64, u32, u32)> = None;
            for k in 0..g.blocks_per_bank {
                if self.state.is_bad(b, k) {
                    tables.bank(b).lock().take(k);
                    continue;
                }
                let mut written = 0;
                let mut is_checkpoint = false;
                let mut block_seq = 0;
                for p in 0..ppb {
                    let addr = PageAddress::new(b, k, p);
                    let out = match self.dev.read_full(addr, tb) {
                        Ok(o) => o,
                        Err(crate::DeviceError::Corrupt(_)) => {
                            written += 1;
                            torn += 1;
                            pages_read += 1;
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    };
                    tb = out.completion.completed_at;
                    pages_read += 1;
                    let Some(m) = out.spare.as_deref().and_then(SpareMetadata::decode) else { break };
                    written += 1;
                    max_seq = max_seq.max(m.seq);
                    block_seq = block_seq.max(m.seq);
                    if !m.verify(&out.data) {
                        torn += 1;
                        continue;
                    }
                    match m.block_type {
                        BlockType::Checkpoint => is_checkpoint = true,
                        BlockType::Data => {
                            if m.lpn != LPN_NONE && m.lpn < self.state.num_lpns() {
                                let ppn = g.ppn(addr);
                                let e = best.entry(m.lpn).or_insert((m.seq, ppn));
                                if m.seq >= e.0 {
                                    *e = (m.seq, ppn);
                                }
                            }
                        }
                    }
                }
                if written == 0 {
                    continue;
                }
                if is_checkpoint {
                    tb = self.dev.erase_block(b, k, tb)?.completed_at;
                    erased += 1;
                    continue;
                }
                tables.bank(b).lock().take(k);
                if written < ppb && partial.map_or(true, |(s, _, _)| block_seq > s) {
                    partial = Some((block_seq, k, written));
                }
            }
            if let Some((_, k, written)) = partial {
                tables.bank(b).lock().set_current(Some(k), written);
            }
            done = done.max(tb);
        }
        let mut map = vec![UNMAPPED; self.state.num_lpns() as usize];
        for (&lpn, &(_, ppn)) in &best {
            map[lpn as usize] = ppn.0;
            let a = g.address(ppn);
            tables.mark_valid(a.bank, a.block, a.page);
        }
        let snapshot = FtlTables {
            banks: g.num_banks(),
            blocks_per_bank: g.blocks_per_bank,
            pages_per_block: ppb,
            map,
            blocks: tables.export(),
            seq: max_seq,
        };
        self.state.load_tables(&snapshot)?;
        Ok(ScanReport {
            pages_read,
            mapped_lpns: best.len() as u64,
            torn_pages: torn,
            checkpoint_blocks_erased: erased,
            done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftl::testing::{block_with, ftl_with, geometry, sector};
    use crate::sim_flash::{FlashGeometry, Lpn};

    fn reopen(f: &Ftl) -> Ftl {
        Ftl::new(f.dev.clone(), f.cfg.clone())
    }

    fn write_page(f: &Ftl, lpn: u64, tag: u8, at: SimTime) -> SimTime {
        let mut t = at;
        for lsn in lpn * 8..lpn * 8 + 8 {
            t = f.write_sector(lsn, &sector(lsn, tag), t).unwrap();
        }
        f.flush_all(t).unwrap()
    }

    #[test]
    fn header_round_trip() {
        let h = ChainHeader { save_seq: 42, position: 3, next: Some((1, 7)), payload_len: 5 };
        let bytes = h.encode(b"hello");
        let (back, crc) = ChainHeader::decode(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(crc.to_le_bytes(), bytes[36..40]);
        assert_ne!(h.encode(b"hellp")[36..40], bytes[36..40]);
        let tail = ChainHeader { next: None, ..h.clone() };
        assert_eq!(ChainHeader::decode(&tail.encode(b"")).unwrap().0.next, None);
        let mut bad = bytes;
        bad[0] ^= 1;
        assert!(ChainHeader::decode(&bad).is_none());
        assert!(ChainHeader::decode(&bytes[..20]).is_none());
    }

    #[test]
    fn blank_card_has_no_checkpoint() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        assert_eq!(f.checkpoint_load(SimTime::ZERO).unwrap(), LoadOutcome::NotFound);
    }

    #[test]
    fn fresh_save_is_one_block_in_the_window() {
        let f = ftl_with(geometry(), |_| {});
        let payload = f.state.tables().encode().len();
        let r = f.checkpoint_save(SimTime::ZERO).unwrap();
        assert_eq!(r.blocks.len(), 1);
        assert_eq!(r.pages as usize, (HEADER_LEN + payload).div_ceil(4096));
        assert_eq!(r.relocations, 0);
        assert!(f.window().contains(&r.head.block));
        let g = reopen(&f);
        let LoadOutcome::Loaded(l) = g.checkpoint_load(SimTime::ZERO).unwrap() else { panic!("not loaded") };
        assert_eq!((l.head, l.chain_pages), (r.head, r.pages));
        assert_eq!(l.probes, 2 * 8);
        g.audit().unwrap();
    }

    #[test]
    fn full_window_relocates_one_block() {
        let f = ftl_with(geometry(), |_| {});
        let mut l = 0;
        for bank in 0..2 {
            // window blocks 0..4 and 12..16; 4..12 are taken first so the
            // injected blocks land in the window, except block 11 stays free
            for k in 0..4 {
                block_with(&f, bank, if bank == 1 && k == 2 { 3 } else { 8 }, &mut l);
            }
            for k in 4..12 {
                f.state.bank(bank).lock().take(k);
            }
            for _ in 12..16 {
                block_with(&f, bank, 8, &mut l);
            }
            f.state.bank(bank).lock().release(11);
        }
        let r = f.checkpoint_save(SimTime::ZERO).unwrap();
        assert_eq!(r.relocations, 1);
        assert_eq!(r.head, PageAddress::new(1, 2, 0));
        assert_eq!(f.stats().gc.valid_pages_copied, 3);
        let g = reopen(&f);
        assert!(matches!(g.checkpoint_load(SimTime::ZERO).unwrap(), LoadOutcome::Loaded(_)));
        assert_eq!(g.state.tables().map, f.state.tables().map);
    }

    #[test]
    fn newer_of_two_chains_wins() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        let t = write_page(&f, 1, 1, SimTime::ZERO);
        let first = f.checkpoint_save(t).unwrap();
        // a crash before the first chain was erased
        f.last_chain.lock().clear();
        let t = write_page(&f, 2, 1, first.done);
        let second = f.checkpoint_save(t).unwrap();
        assert_ne!(first.head, second.head);
        let g = reopen(&f);
        let LoadOutcome::Loaded(l) = g.checkpoint_load(SimTime::ZERO).unwrap() else { panic!("not loaded") };
        assert_eq!(l.head, second.head);
        assert!(g.state.map.lookup(Lpn(2)).is_some());
        assert_eq!(g.read_sector(17, l.done).unwrap().0, sector(17, 1));
    }

    #[test]
    fn corrupt_newest_head_falls_back_to_not_found() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        let t = write_page(&f, 1, 1, SimTime::ZERO);
        let saved = f.checkpoint_save(t).unwrap();
        let (b, k) = (0..2)
            .find_map(|b| f.state.bank(b).lock().first_free_in(f.window()).map(|k| (b, k)))
            .unwrap();
        let hdr = ChainHeader { save_seq: u64::MAX / 2, position: 0, next: None, payload_len: 4 };
        let mut page = hdr.encode(b"abcd").to_vec();
        page.extend_from_slice(b"abce");
        page.resize(4096, 0);
        let spare = SpareMetadata::new(BlockType::Checkpoint, 0, u64::MAX / 2, &page).encode();
        f.dev.write_page(PageAddress::new(b, k, 0), &page, &spare, saved.done).unwrap();
        let g = reopen(&f);
        assert_eq!(g.checkpoint_load(SimTime::ZERO).unwrap(), LoadOutcome::NotFound);
        // the page scan still finds the data
        let h = reopen(&f);
        let r = h.recovery_scan(SimTime::ZERO).unwrap();
        assert_eq!(r.mapped_lpns, 1);
        assert!(r.checkpoint_blocks_erased >= 2);
        h.audit().unwrap();
    }

    #[test]
    fn scan_keeps_the_newest_copy_and_continues_the_sequence() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        let t = write_page(&f, 3, 1, SimTime::ZERO);
        let t = write_page(&f, 3, 2, t);
        let newest = f.state.map.lookup(Lpn(3)).unwrap();
        // highest sequence number on the card
        let last = f.state.seq.next() - 1;
        let g = reopen(&f);
        let r = g.recovery_scan(t).unwrap();
        assert_eq!((r.mapped_lpns, r.torn_pages), (1, 0));
        assert_eq!(g.state.map.lookup(Lpn(3)), Some(newest));
        assert_eq!(g.read_sector(24, r.done).unwrap().0, sector(24, 2));
        assert!(g.state.seq.next() > last);
        g.audit().unwrap();
    }

    #[test]
    fn scan_of_an_erased_card_is_empty() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        let r = f.recovery_scan(SimTime::ZERO).unwrap();
        assert_eq!((r.mapped_lpns, r.pages_read), (0, 16));
        assert_eq!(f.state.blocks.total_free(), 16);
        assert!(f.state.tables().map.iter().all(|&m| m == UNMAPPED));
    }

    #[test]
    fn torn_page_from_a_power_cut_is_skipped() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        let t = write_page(&f, 1, 1, SimTime::ZERO);
        f.dev.arm_power_cut(1);
        let mut t2 = t;
        for lsn in 8..16 {
            t2 = f.write_sector(lsn, &sector(lsn, 2), t2).unwrap();
        }
        assert!(f.flush_all(t2).is_err());
        f.dev.restore_power();
        let g = reopen(&f);
        let r = g.recovery_scan(SimTime::ZERO).unwrap();
        assert_eq!((r.mapped_lpns, r.torn_pages), (1, 1));
        assert_eq!(g.read_sector(8, r.done).unwrap().0, sector(8, 1));
        g.audit().unwrap();
    }
}
