use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};

use parking_lot::{Mutex, MutexGuard};

/// Allocation state of one bank, guarded by the bank lock: the bank's slice
/// of the free-block bitmap and its current-writing block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankAlloc {
    free_bits: Vec<u64>,
    blocks: u32,
    pub current: Option<u32>,
    /// Next page to program in `current`.
    pub next_page: u32,
}

impl BankAlloc {
    fn new(blocks: u32) -> Self {
        let words = blocks.div_ceil(64) as usize;
        let mut free_bits = vec![u64::MAX; words];
        let tail = blocks % 64;
        if tail != 0 {
            free_bits[words - 1] = (1u64 << tail) - 1;
        }
        BankAlloc { free_bits, blocks, current: None, next_page: 0 }
    }

    pub fn is_free(&self, block: u32) -> bool {
        self.free_bits[(block / 64) as usize] >> (block % 64) & 1 == 1
    }

    pub(crate) fn set_free(&mut self, block: u32, free: bool) {
        let w = &mut self.free_bits[(block / 64) as usize];
        if free {
            *w |= 1 << (block % 64);
        } else {
            *w &= !(1 << (block % 64));
        }
    }

    pub fn free_count(&self) -> u32 {
        self.free_bits.iter().map(|w| w.count_ones()).sum()
    }

    /// Lowest-index free block.
    pub fn lowest_free(&self) -> Option<u32> {
        self.free_bits.iter().enumerate().find_map(|(i, &w)| {
            (w != 0).then(|| i as u32 * 64 + w.trailing_zeros()).filter(|&b| b < self.blocks)
        })
    }

    /// Lowest free block among `candidates`.
    pub fn first_free_in(&self, candidates: impl IntoIterator<Item = u32>) -> Option<u32> {
        candidates.into_iter().find(|&b| b < self.blocks && self.is_free(b))
    }
}

/// Per-bank bookkeeping.
pub struct BankInfo {
    alloc: Mutex<BankAlloc>,
    free_blocks: AtomicU32,
    valid_pages: AtomicU64,
    gc_active: AtomicBool,
    exclusive_gc: AtomicBool,
}

/// The bank lock. Keeps the lock-free `free_blocks` mirror in step with the
/// bitmap it guards.
pub struct BankGuard<'a> {
    info: &'a BankInfo,
    alloc: MutexGuard<'a, BankAlloc>,
}

impl std::ops::Deref for BankGuard<'_> {
    type Target = BankAlloc;
    fn deref(&self) -> &BankAlloc {
        &self.alloc
    }
}

impl BankGuard<'_> {
    /// Takes `block` out of the free bitmap.
    pub fn take(&mut self, block: u32) {
        debug_assert!(self.alloc.is_free(block));
        self.alloc.set_free(block, false);
        self.info.free_blocks.fetch_sub(1, Ordering::AcqRel);
    }

    /// Returns an erased block to the free bitmap.
    pub fn release(&mut self, block: u32) {
        debug_assert!(!self.alloc.is_free(block));
        self.alloc.set_free(block, true);
        self.info.free_blocks.fetch_add(1, Ordering::AcqRel);
    }

    pub fn set_current(&mut self, block: Option<u32>, next_page: u32) {
        self.alloc.current = block;
        self.alloc.next_page = next_page;
    }

    pub fn advance_page(&mut self, pages_per_block: u32) {
        self.alloc.next_page += 1;
        if self.alloc.next_page == pages_per_block {
            self.alloc.current = None;
            self.alloc.next_page = 0;
        }
    }
}

impl BankInfo {
    fn new(blocks: u32) -> Self {
        BankInfo {
            alloc: Mutex::new(BankAlloc::new(blocks)),
            free_blocks: AtomicU32::new(blocks),
            valid_pages: AtomicU64::new(0),
            gc_active: AtomicBool::new(false),
            exclusive_gc: AtomicBool::new(false),
        }
    }

    pub fn lock(&self) -> BankGuard<'_> {
        BankGuard { info: self, alloc: self.alloc.lock() }
    }

    pub fn free_blocks(&self) -> u32 {
        self.free_blocks.load(Ordering::Acquire)
    }

    pub fn valid_pages(&self) -> u64 {
        self.valid_pages.load(Ordering::Acquire)
    }

    pub fn gc_active(&self) -> bool {
        self.gc_active.load(Ordering::Acquire)
    }

    /// Test-and-set claim of the bank for one collector.
    pub fn try_claim_gc(&self) -> bool {
        !self.gc_active.swap(true, Ordering::AcqRel)
    }

    pub fn release_gc(&self) {
        self.gc_active.store(false, Ordering::Release);
    }

    pub fn exclusive(&self) -> bool {
        self.exclusive_gc.load(Ordering::Acquire)
    }

    pub fn set_exclusive(&self, on: bool) -> bool {
        self.exclusive_gc.swap(on, Ordering::AcqRel)
    }

    /// Snapshot of the locked part, taking the lock briefly.
    pub fn alloc_snapshot(&self) -> BankAlloc {
        self.alloc.lock().clone()
    }
}

/// Per-block valid-page bitmaps and counts for the whole card.
pub struct BlkInfo {
    words_per_block: usize,
    bits: Box<[AtomicU64]>,
    counts: Box<[AtomicU32]>,
}

impl BlkInfo {
    fn new(blocks: usize, pages_per_block: u32) -> Self {
        let words_per_block = pages_per_block.div_ceil(64) as usize;
        BlkInfo {
            words_per_block,
            bits: (0..blocks * words_per_block).map(|_| AtomicU64::new(0)).collect(),
            counts: (0..blocks).map(|_| AtomicU32::new(0)).collect(),
        }
    }

    fn word(&self, block: usize, page: u32) -> (&AtomicU64, u64) {
        (&self.bits[block * self.words_per_block + (page / 64) as usize], 1u64 << (page % 64))
    }

    pub fn is_valid(&self, block: usize, page: u32) -> bool {
        let (w, m) = self.word(block, page);
        w.load(Ordering::Acquire) & m != 0
    }

    pub fn valid_count(&self, block: usize) -> u32 {
        self.counts[block].load(Ordering::Acquire)
    }

    /// Sets the bit; true if it was clear.
    fn set(&self, block: usize, page: u32) -> bool {
        let (w, m) = self.word(block, page);
        let newly = w.fetch_or(m, Ordering::AcqRel) & m == 0;
        if newly {
            self.counts[block].fetch_add(1, Ordering::AcqRel);
        }
        newly
    }

    /// Clears the bit; true if it was set.
    fn clear(&self, block: usize, page: u32) -> bool {
        let (w, m) = self.word(block, page);
        let was = w.fetch_and(!m, Ordering::AcqRel) & m != 0;
        if was {
            self.counts[block].fetch_sub(1, Ordering::AcqRel);
        }
        was
    }

    fn reset_block(&self, block: usize) {
        for w in &self.bits[block * self.words_per_block..(block + 1) * self.words_per_block] {
            w.store(0, Ordering::Release);
        }
        self.counts[block].store(0, Ordering::Release);
    }

    pub fn valid_pages_of(&self, block: usize, pages_per_block: u32) -> Vec<u32> {
        (0..pages_per_block).filter(|&p| self.is_valid(block, p)).collect()
    }

    fn popcount(&self, block: usize) -> u32 {
        self.bits[block * self.words_per_block..(block + 1) * self.words_per_block]
            .iter()
            .map(|w| w.load(Ordering::Acquire).count_ones())
            .sum()
    }

    fn raw_words(&self, block: usize) -> Vec<u64> {
        self.bits[block * self.words_per_block..(block + 1) * self.words_per_block]
            .iter()
            .map(|w| w.load(Ordering::Acquire))
            .collect()
    }
}

/// Per-bank and per-block tables, plus running totals of valid/invalid marks.
pub struct BlockTables {
    pub(crate) banks: Vec<BankInfo>,
    pub(crate) blk: BlkInfo,
    blocks_per_bank: u32,
    pages_per_block: u32,
    marks_valid: AtomicU64,
    marks_invalid: AtomicU64,
}

impl BlockTables {
    pub fn new(banks: u32, blocks_per_bank: u32, pages_per_block: u32) -> Self {
        BlockTables {
            banks: (0..banks).map(|_| BankInfo::new(blocks_per_bank)).collect(),
            blk: BlkInfo::new((banks * blocks_per_bank) as usize, pages_per_block),
            blocks_per_bank,
            pages_per_block,
            marks_valid: AtomicU64::new(0),
            marks_invalid: AtomicU64::new(0),
        }
    }

    pub fn bank(&self, bank: u32) -> &BankInfo {
        &self.banks[bank as usize]
    }

    pub fn num_banks(&self) -> u32 {
        self.banks.len() as u32
    }

    fn gidx(&self, bank: u32, block: u32) -> usize {
        bank as usize * self.blocks_per_bank as usize + block as usize
    }

    pub fn block_valid(&self, bank: u32, block: u32) -> u32 {
        self.blk.valid_count(self.gidx(bank, block))
    }

    pub fn page_valid(&self, bank: u32, block: u32, page: u32) -> bool {
        self.blk.is_valid(self.gidx(bank, block), page)
    }

    pub fn valid_pages_of(&self, bank: u32, block: u32) -> Vec<u32> {
        self.blk.valid_pages_of(self.gidx(bank, block), self.pages_per_block)
    }

    /// Marks a programmed page valid. Idempotent.
    pub fn mark_valid(&self, bank: u32, block: u32, page: u32) {
        if self.blk.set(self.gidx(bank, block), page) {
            self.banks[bank as usize].valid_pages.fetch_add(1, Ordering::AcqRel);
            self.marks_valid.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Marks a page invalid. Invalidating an already invalid page is a no-op.
    pub fn mark_invalid(&self, bank: u32, block: u32, page: u32) {
        if self.blk.clear(self.gidx(bank, block), page) {
            self.banks[bank as usize].valid_pages.fetch_sub(1, Ordering::AcqRel);
            self.marks_invalid.fetch_add(1, Ordering::Relaxed);
        } else {
            log::debug!("double invalidate of {bank}:{block}:{page}");
        }
    }

    /// Forgets the valid bits of an erased block.
    pub(crate) fn reset_block(&self, bank: u32, block: u32) {
        let g = self.gidx(bank, block);
        let n = self.blk.valid_count(g);
        if n != 0 {
            self.banks[bank as usize].valid_pages.fetch_sub(n as u64, Ordering::AcqRel);
            self.marks_invalid.fetch_add(n as u64, Ordering::Relaxed);
        }
        self.blk.reset_block(g);
    }

    pub fn mark_totals(&self) -> (u64, u64) {
        (self.marks_valid.load(Ordering::Relaxed), self.marks_invalid.load(Ordering::Relaxed))
    }

    pub fn total_valid(&self) -> u64 {
        self.banks.iter().map(|b| b.valid_pages()).sum()
    }

    pub fn total_free(&self) -> u64 {
        self.banks.iter().map(|b| b.free_blocks() as u64).sum()
    }

    /// Plain copy of everything, for snapshots and comparisons.
    pub fn export(&self) -> BlockTablesData {
        let blocks = self.banks.len() * self.blocks_per_bank as usize;
        BlockTablesData {
            free: self.banks.iter().map(|b| b.alloc_snapshot().free_bits).collect(),
            current: self
                .banks
                .iter()
                .map(|b| {
                    let a = b.alloc_snapshot();
                    (a.current, a.next_page)
                })
                .collect(),
            bank_counts: self.banks.iter().map(|b| (b.free_blocks(), b.valid_pages())).collect(),
            valid_bits: (0..blocks).map(|g| self.blk.raw_words(g)).collect(),
            valid_counts: (0..blocks).map(|g| self.blk.valid_count(g)).collect(),
        }
    }

    /// Replaces all tables. Requires that nothing else uses them.
    pub(crate) fn import(&self, d: &BlockTablesData) {
        let mut total = 0;
        for (b, bank) in self.banks.iter().enumerate() {
            let mut a = bank.alloc.lock();
            a.free_bits.clone_from(&d.free[b]);
            a.current = d.current[b].0;
            a.next_page = d.current[b].1;
            bank.free_blocks.store(d.bank_counts[b].0, Ordering::Release);
            bank.valid_pages.store(d.bank_counts[b].1, Ordering::Release);
            bank.gc_active.store(false, Ordering::Release);
            bank.exclusive_gc.store(false, Ordering::Release);
            total += d.bank_counts[b].1;
        }
        for (g, words) in d.valid_bits.iter().enumerate() {
            for (i, &w) in words.iter().enumerate() {
                self.blk.bits[g * self.blk.words_per_block + i].store(w, Ordering::Release);
            }
            self.blk.counts[g].store(d.valid_counts[g], Ordering::Release);
        }
        self.marks_valid.store(total, Ordering::Relaxed);
        self.marks_invalid.store(0, Ordering::Relaxed);
    }

    /// Stop-the-world recount of the counters against the bitmaps.
    pub fn audit_counters(&self) -> Result<(), String> {
        for (b, bank) in self.banks.iter().enumerate() {
            let a = bank.alloc_snapshot();
            if a.free_count() != bank.free_blocks() {
                return Err(format!(
                    "bank {b}: free_blocks {} but bitmap has {}",
                    bank.free_blocks(),
                    a.free_count()
                ));
            }
            if let Some(cur) = a.current {
                if a.is_free(cur) {
                    return Err(format!("bank {b}: current block {cur} is free"));
                }
                if a.next_page >= self.pages_per_block {
                    return Err(format!("bank {b}: next page {} out of range", a.next_page));
                }
            }
            let mut sum = 0u64;
            for k in 0..self.blocks_per_bank {
                let g = self.gidx(b as u32, k);
                let pc = self.blk.popcount(g);
                if pc != self.blk.valid_count(g) {
                    return Err(format!(
                        "block {b}:{k}: valid count {} but bitmap has {pc}",
                        self.blk.valid_count(g)
                    ));
                }
                if pc != 0 && a.is_free(k) {
                    return Err(format!("block {b}:{k} is free but holds {pc} valid pages"));
                }
                sum += pc as u64;
            }
            if sum != bank.valid_pages() {
                return Err(format!("bank {b}: valid_pages {} but blocks sum to {sum}", bank.valid_pages()));
            }
        }
        let (v, i) = self.mark_totals();
        if v - i != self.total_valid() {
            return Err(format!("marks valid {v} - invalid {i} != total valid {}", self.total_valid()));
        }
        Ok(())
    }
}

/// Plain-data form of [`BlockTables`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockTablesData {
    pub free: Vec<Vec<u64>>,
    pub current: Vec<(Option<u32>, u32)>,
    pub bank_counts: Vec<(u32, u64)>,
    pub valid_bits: Vec<Vec<u64>>,
    pub valid_counts: Vec<u32>,
}
