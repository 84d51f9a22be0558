//! Invariant checks, each over a randomized workload drawn from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parftl::ftl_state::FtlTables;
use parftl::gc::GcPolicy;
use parftl::sim_flash::{Lpn, PageAddress};
use parftl::time::SimTime;
use parftl::{Engine, Error, Ftl, StartPath};

use crate::shadow::ShadowDisk;
use crate::{config, decode_version, device, geometry, sector_data, SECTOR};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// An engine on a fresh card with a shadow of what it should hold.
pub struct Rig {
    pub engine: Engine,
    pub disk: ShadowDisk,
    pub policy: GcPolicy,
    pub seed: u64,
    rng: ChaCha8Rng,
    pub sectors_written: u64,
    pub sectors_read: u64,
}

impl Rig {
    pub fn new(policy: GcPolicy, seed: u64) -> Result<Rig, String> {
        let engine = Engine::start(&config(policy, seed, true), device(&geometry())).map_err(err)?;
        let disk = ShadowDisk::new(engine.ftl().num_sectors());
        Ok(Rig {
            engine,
            disk,
            policy,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sectors_written: 0,
            sectors_read: 0,
        })
    }

    pub fn ftl(&self) -> &Ftl {
        self.engine.ftl()
    }

    /// Mostly overwrites of a hot region, with reads, flushes and forced
    /// collections mixed in. Reads are checked against the shadow.
    pub fn churn(&mut self, ops: usize) -> Result<(), String> {
        let n = self.disk.sectors();
        let ppb = self.ftl().geometry().pages_per_block;
        for _ in 0..ops {
            let len = self.rng.gen_range(1..=16u64);
            let start = if self.rng.gen_bool(0.7) { self.rng.gen_range(0..n / 4) } else { self.rng.gen_range(0..n) };
            let len = len.min(n - start);
            match self.rng.gen_range(0..100) {
                0..=69 => {
                    let mut data = Vec::with_capacity(len as usize * SECTOR);
                    for lsn in start..start + len {
                        let v = self.disk.write(lsn);
                        data.extend(sector_data(lsn, v));
                    }
                    self.engine.write(start, &data).map_err(err)?;
                    self.sectors_written += len;
                }
                70..=89 => self.check_range(start, len)?,
                90..=95 => {
                    self.engine.flush().map_err(err)?;
                    self.disk.persist_all();
                }
                _ => {
                    self.engine.force_gc(self.rng.gen_range(0..ppb)).map_err(err)?;
                }
            }
        }
        Ok(())
    }

    pub fn check_range(&mut self, start: u64, len: u64) -> Result<(), String> {
        let data = self.engine.read(start, len as usize).map_err(err)?;
        self.sectors_read += len;
        for (i, chunk) in data.chunks(SECTOR).enumerate() {
            let lsn = start + i as u64;
            let want = self.disk.current(lsn);
            let got = decode_version(lsn, chunk);
            if got != Some(want) {
                return Err(format!("sector {lsn}: expected version {want}, read {got:?}"));
            }
        }
        Ok(())
    }

    pub fn check_all(&mut self) -> Result<(), String> {
        let n = self.disk.sectors();
        let mut s = 0;
        while s < n {
            let len = 256.min(n - s);
            self.check_range(s, len)?;
            s += len;
        }
        Ok(())
    }

    /// Stops the engine and starts a new one on the same card.
    pub fn restart(&mut self, clean: bool) -> Result<(), String> {
        self.engine.shutdown(clean).map_err(err)?;
        if clean {
            self.disk.persist_all();
        }
        let dev = self.engine.device().clone();
        self.engine = Engine::start(&config(self.policy, self.seed, true), dev).map_err(err)?;
        Ok(())
    }
}

/// On every block the programmed pages form a prefix, valid pages lie
/// inside it, and a bank's current block continues exactly at its end.
pub fn check_prefix(ftl: &Ftl) -> Result<(), String> {
    let g = ftl.geometry();
    let dev = ftl.device();
    for bank in 0..g.num_banks() {
        let alloc = ftl.state.bank(bank).alloc_snapshot();
        for block in 0..g.blocks_per_bank {
            let k = dev.next_writable_page(bank, block);
            for page in 0..g.pages_per_block {
                let written = dev.peek_data(PageAddress::new(bank, block, page)).is_some();
                if written != (page < k) {
                    return Err(format!("block {bank}:{block} page {page} written={written} but prefix is {k}"));
                }
                if ftl.state.blocks.page_valid(bank, block, page) && page >= k {
                    return Err(format!("valid page {bank}:{block}:{page} beyond the written prefix {k}"));
                }
            }
            if alloc.current == Some(block) && alloc.next_page != k {
                return Err(format!("current block {bank}:{block} continues at {} but {k} pages are written", alloc.next_page));
            }
        }
    }
    Ok(())
}

pub fn prefix_invariant(seed: u64, ops: usize) -> Result<(), String> {
    let mut rig = Rig::new(GcPolicy::Pllgc, seed)?;
    for _ in 0..ops.div_ceil(25) {
        rig.churn(25)?;
        check_prefix(rig.ftl())?;
    }
    rig.restart(seed % 2 == 0)?;
    check_prefix(rig.ftl())
}

/// Engine counters agree with the operations issued, and the derived
/// totals agree with the tables they summarize.
pub fn counters_consistent(seed: u64, ops: usize) -> Result<(), String> {
    let policy = [GcPolicy::Npgc, GcPolicy::Pllgc, GcPolicy::Adaptive][seed as usize % 3];
    let mut rig = Rig::new(policy, seed)?;
    rig.churn(ops)?;
    rig.engine.audit().map_err(err)?;
    let s = rig.engine.stats().map_err(err)?;
    if s.io.user_sectors_written != rig.sectors_written {
        return Err(format!("{} sectors written, counter says {}", rig.sectors_written, s.io.user_sectors_written));
    }
    if s.io.user_sectors_read != rig.sectors_read {
        return Err(format!("{} sectors read, counter says {}", rig.sectors_read, s.io.user_sectors_read));
    }
    if s.io.cache_hits + s.io.cache_misses != rig.sectors_written + rig.sectors_read {
        return Err(format!("hits {} + misses {} do not cover every sector access", s.io.cache_hits, s.io.cache_misses));
    }
    let ftl = rig.ftl();
    let mapped = (0..ftl.state.num_lpns()).filter(|&l| ftl.state.map.lookup(Lpn(l)).is_some()).count() as u64;
    if s.valid_pages != mapped {
        return Err(format!("{} valid pages but {mapped} mapped logical pages", s.valid_pages));
    }
    let free: u64 = (0..ftl.geometry().num_banks()).map(|b| ftl.state.bank(b).alloc_snapshot().free_count() as u64).sum();
    if s.free_blocks != free {
        return Err(format!("{} free blocks counted, {free} in the bitmaps", s.free_blocks));
    }
    if s.gc.erases_performed > s.device.erases {
        return Err(format!("{} collector erases but the card saw {}", s.gc.erases_performed, s.device.erases));
    }
    Ok(())
}

/// Collecting a block leaves the bank's valid-page count unchanged, and the
/// erase step adds exactly one free block. Returns the number of blocks
/// collected.
pub fn gc_conservation(seed: u64, ops: usize) -> Result<u64, String> {
    let mut rig = Rig::new(GcPolicy::Npgc, seed)?;
    rig.churn(ops)?;
    rig.engine.flush().map_err(err)?;
    rig.disk.persist_all();
    let ftl = rig.engine.ftl().clone();
    let ppb = ftl.geometry().pages_per_block;
    let mut t = rig.engine.now().map_err(err)?;
    let mut collected = 0;
    for bank in 0..ftl.geometry().num_banks() {
        let info = ftl.state.bank(bank);
        let Some(victim) = ftl.select_victim(bank, ppb - 1) else { continue };
        if !info.try_claim_gc() {
            return Err(format!("bank {bank} claimed by an idle engine"));
        }
        let res = (|| {
            let mut c = match ftl.begin_collection(bank, victim) {
                Ok(c) => c,
                Err(Error::GcNoRoom { .. }) => return Ok(false),
                Err(e) => return Err(err(e)),
            };
            let valid = info.valid_pages();
            loop {
                let free = info.free_blocks();
                let (done, erased) = ftl.collect_step(&mut c, t).map_err(err)?;
                t = done;
                if info.valid_pages() != valid {
                    return Err(format!("bank {bank} valid pages {valid} -> {} while collecting", info.valid_pages()));
                }
                if erased {
                    if info.free_blocks() != free + 1 {
                        return Err(format!("erase of {bank}:{victim} took free blocks {free} -> {}", info.free_blocks()));
                    }
                    return Ok(true);
                }
            }
        })();
        info.release_gc();
        collected += res? as u64;
    }
    rig.engine.audit().map_err(err)?;
    rig.check_all()?;
    Ok(collected)
}

fn comparable(t: &FtlTables) -> (Vec<u32>, Vec<Vec<u64>>, Vec<u32>) {
    (t.map.clone(), t.blocks.valid_bits.clone(), t.blocks.valid_counts.clone())
}

/// A clean shutdown followed by a start restores the tables as saved and
/// every sector's content.
pub fn checkpoint_round_trip(seed: u64, ops: usize) -> Result<(), String> {
    let policy = if seed % 2 == 0 { GcPolicy::Pllgc } else { GcPolicy::Npgc };
    let mut rig = Rig::new(policy, seed)?;
    rig.churn(ops)?;
    let old = rig.engine.ftl().clone();
    rig.restart(true)?;
    let before = comparable(&old.state.tables());
    if !matches!(rig.engine.start_report().path, StartPath::Checkpoint(_)) {
        return Err(format!("start after a clean shutdown took {:?}", rig.engine.start_report().path));
    }
    if comparable(&rig.ftl().state.tables()) != before {
        return Err("tables after the checkpoint load differ from the saved ones".into());
    }
    rig.engine.audit().map_err(err)?;
    rig.check_all()
}

/// Loading a checkpoint and scanning every page of the same image build the
/// same tables.
pub fn recovery_matches_load(seed: u64, ops: usize) -> Result<(), String> {
    let mut rig = Rig::new(GcPolicy::Pllgc, seed)?;
    rig.churn(ops)?;
    rig.engine.shutdown(true).map_err(err)?;
    let dev = rig.engine.device().clone();
    let copy = std::sync::Arc::new(dev.fork());
    let cfg = config(GcPolicy::Pllgc, seed, true);
    let loaded = Engine::start(&cfg, dev).map_err(err)?;
    if !matches!(loaded.start_report().path, StartPath::Checkpoint(_)) {
        return Err("no checkpoint after a clean shutdown".into());
    }
    let scanned = Ftl::new(copy.clone(), cfg.resolve(copy.geometry()).map_err(err)?);
    scanned.recovery_scan(SimTime::ZERO).map_err(err)?;
    scanned.audit().map_err(|e| format!("audit after scan: {e}"))?;
    let mut a = loaded.ftl().state.tables();
    let mut b = scanned.state.tables();
    // the loader also observes the checkpoint's own sequence numbers
    a.seq = 0;
    b.seq = 0;
    if a.map != b.map {
        let diff = a.map.iter().zip(&b.map).position(|(x, y)| x != y).unwrap_or(0);
        return Err(format!("maps differ first at lpn {diff}: {} vs {}", a.map[diff], b.map[diff]));
    }
    if a != b {
        return Err("maps agree but block tables differ between load and scan".into());
    }
    loaded.shutdown(false).map_err(err)?;
    Ok(())
}

/// Write amplification is at least 1 and matches the programs the card
/// itself counted.
pub fn write_amplification(seed: u64, ops: usize) -> Result<f64, String> {
    let policy = [GcPolicy::Npgc, GcPolicy::Pllgc, GcPolicy::Adaptive][seed as usize % 3];
    let mut rig = Rig::new(policy, seed)?;
    rig.churn(ops)?;
    rig.engine.flush().map_err(err)?;
    let s = rig.engine.stats().map_err(err)?;
    if s.io.user_sectors_flushed == 0 {
        return Ok(s.write_amplification);
    }
    if s.io.user_sectors_flushed > rig.sectors_written {
        return Err(format!("{} sectors flushed from {} written", s.io.user_sectors_flushed, rig.sectors_written));
    }
    let spp = rig.ftl().sectors_per_page() as f64;
    let oracle = s.device.pages_written as f64 * spp / s.io.user_sectors_flushed as f64;
    if (s.write_amplification - oracle).abs() > 1e-9 {
        return Err(format!("write amplification {} but the card implies {oracle}", s.write_amplification));
    }
    if s.write_amplification < 1.0 {
        return Err(format!("write amplification {} below 1", s.write_amplification));
    }
    Ok(s.write_amplification)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn properties_hold_on_one_seed() {
        prefix_invariant(1, 100).unwrap();
        counters_consistent(1, 100).unwrap();
        assert!(gc_conservation(1, 200).unwrap() > 0);
        checkpoint_round_trip(1, 100).unwrap();
        recovery_matches_load(1, 100).unwrap();
        assert!(write_amplification(1, 100).unwrap() >= 1.0);
    }
}
