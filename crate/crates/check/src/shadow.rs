//! Shadow block device: every sector's current version, the last version
//! known to be on flash, and the versions written since. Acknowledged data
//! must read back exactly while the engine runs and after a clean shutdown.
//! After a dirty shutdown a sector may hold any version written since it was
//! last made durable, or that durable version itself.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parftl::gc::GcPolicy;
use parftl::{Engine, Ftl};

use crate::{config, decode_version, device, geometry, sector_data, SECTOR};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowConfig {
    pub seed: u64,
    pub ops: usize,
    pub policy: GcPolicy,
    /// OS threads instead of the deterministic scheduler.
    pub threaded: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShadowReport {
    pub ops: usize,
    pub sectors_written: u64,
    pub sectors_checked: u64,
    pub flushes: u64,
    pub syncs: u64,
    pub forced_gc: u64,
    pub daemon_ticks: u64,
    pub clean_restarts: u64,
    pub dirty_restarts: u64,
    pub audits: u64,
    pub mismatches: u64,
    /// The first few mismatches, for the failure message.
    pub examples: Vec<String>,
}

#[derive(Debug, Default)]
pub struct ShadowDisk {
    current: Vec<u32>,
    durable: Vec<u32>,
    /// Versions written since the sector was last durable, oldest first.
    pending: BTreeMap<u64, Vec<u32>>,
    next_version: u32,
}

impl ShadowDisk {
    pub fn new(sectors: u64) -> Self {
        ShadowDisk { current: vec![0; sectors as usize], durable: vec![0; sectors as usize], ..Default::default() }
    }

    pub fn sectors(&self) -> u64 {
        self.current.len() as u64
    }

    pub fn current(&self, lsn: u64) -> u32 {
        self.current[lsn as usize]
    }

    /// Records a write and returns the version to write.
    pub fn write(&mut self, lsn: u64) -> u32 {
        self.next_version += 1;
        let v = self.next_version;
        self.current[lsn as usize] = v;
        self.pending.entry(lsn).or_default().push(v);
        v
    }

    pub fn persist_all(&mut self) {
        for (lsn, _) in std::mem::take(&mut self.pending) {
            self.durable[lsn as usize] = self.current[lsn as usize];
        }
    }

    pub fn persist_range(&mut self, first: u64, count: u64) {
        let done: Vec<u64> = self.pending.range(first..first + count).map(|(&l, _)| l).collect();
        for lsn in done {
            self.pending.remove(&lsn);
            self.durable[lsn as usize] = self.current[lsn as usize];
        }
    }

    /// Versions sector `lsn` may hold after a crash.
    pub fn crash_candidates(&self, lsn: u64) -> Vec<u32> {
        let mut c = vec![self.durable[lsn as usize]];
        c.extend(self.pending.get(&lsn).into_iter().flatten());
        c
    }

    /// Adopts what the card holds after a crash.
    pub fn settle(&mut self, lsn: u64, version: u32) {
        self.current[lsn as usize] = version;
        self.durable[lsn as usize] = version;
        self.pending.remove(&lsn);
    }
}

struct Run {
    cfg: ShadowConfig,
    rng: ChaCha8Rng,
    engine: Engine,
    disk: ShadowDisk,
    report: ShadowReport,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Run {
    fn mismatch(&mut self, msg: String) {
        self.report.mismatches += 1;
        if self.report.examples.len() < 5 {
            self.report.examples.push(msg);
        }
    }

    fn audit(&mut self) -> Result<(), String> {
        // background threads may be mid-collection; those runs audit at
        // shutdown instead
        if !self.cfg.threaded {
            self.engine.audit().map_err(err)?;
            self.report.audits += 1;
        }
        Ok(())
    }

    fn audit_stopped(&mut self) -> Result<(), String> {
        self.engine.ftl().audit().map_err(|e| format!("audit after shutdown: {e}"))?;
        self.report.audits += 1;
        Ok(())
    }

    fn run_len(&mut self) -> (u64, u64) {
        let n = self.disk.sectors();
        let len = self.rng.gen_range(1..=16u64);
        // a quarter of the card takes most of the writes
        let start = if self.rng.gen_bool(0.6) { self.rng.gen_range(0..n / 4) } else { self.rng.gen_range(0..n) };
        (start, len.min(n - start))
    }

    fn write(&mut self) -> Result<(), String> {
        let (start, len) = self.run_len();
        let mut data = Vec::with_capacity(len as usize * SECTOR);
        for lsn in start..start + len {
            let v = self.disk.write(lsn);
            data.extend(sector_data(lsn, v));
        }
        self.engine.write(start, &data).map_err(err)?;
        self.report.sectors_written += len;
        Ok(())
    }

    fn check_range(&mut self, start: u64, len: u64) -> Result<(), String> {
        let data = self.engine.read(start, len as usize).map_err(err)?;
        for (i, chunk) in data.chunks(SECTOR).enumerate() {
            let lsn = start + i as u64;
            let want = self.disk.current(lsn);
            self.report.sectors_checked += 1;
            match decode_version(lsn, chunk) {
                Some(v) if v == want => {}
                got => self.mismatch(format!("sector {lsn}: expected version {want}, read {got:?}")),
            }
        }
        Ok(())
    }

    fn read(&mut self) -> Result<(), String> {
        let (start, len) = self.run_len();
        self.check_range(start, len)
    }

    fn check_all(&mut self) -> Result<(), String> {
        let n = self.disk.sectors();
        let mut s = 0;
        while s < n {
            let len = 256.min(n - s);
            self.check_range(s, len)?;
            s += len;
        }
        Ok(())
    }

    fn restart(&mut self) -> Result<(), String> {
        let dev = self.engine.device().clone();
        self.cfg.seed = self.cfg.seed.wrapping_add(1);
        let c = config(self.cfg.policy, self.cfg.seed, !self.cfg.threaded);
        self.engine = Engine::start(&c, dev).map_err(|e| format!("restart: {e}"))?;
        self.audit()
    }

    fn clean_restart(&mut self) -> Result<(), String> {
        self.engine.shutdown(true).map_err(err)?;
        self.audit_stopped()?;
        self.disk.persist_all();
        self.restart()?;
        self.report.clean_restarts += 1;
        self.check_all()
    }

    fn dirty_restart(&mut self) -> Result<(), String> {
        self.engine.shutdown(false).map_err(err)?;
        self.audit_stopped()?;
        self.restart()?;
        self.report.dirty_restarts += 1;
        let n = self.disk.sectors();
        let mut s = 0;
        while s < n {
            let len = 256.min(n - s);
            let data = self.engine.read(s, len as usize).map_err(err)?;
            for (i, chunk) in data.chunks(SECTOR).enumerate() {
                let lsn = s + i as u64;
                let allowed = self.disk.crash_candidates(lsn);
                self.report.sectors_checked += 1;
                match decode_version(lsn, chunk) {
                    Some(v) if allowed.contains(&v) => self.disk.settle(lsn, v),
                    got => {
                        self.mismatch(format!("sector {lsn} after crash: read {got:?}, allowed {allowed:?}"));
                        self.disk.settle(lsn, got.unwrap_or(0));
                    }
                }
            }
            s += len;
        }
        Ok(())
    }

    fn force_gc(&mut self) -> Result<(), String> {
        let ftl: &Ftl = self.engine.ftl();
        let ppb = ftl.geometry().pages_per_block;
        let mut limits: Vec<u32> = ftl.config().levels.levels.iter().map(|l| l.valid_pages).collect();
        limits.push(ppb - 1);
        let max_valid = limits[self.rng.gen_range(0..limits.len())];
        self.engine.force_gc(max_valid).map_err(err)?;
        self.report.forced_gc += 1;
        self.audit()
    }

    fn daemon_tick(&mut self) -> Result<(), String> {
        let io = &self.engine.ftl().config().io;
        let ns = (io.idle_flush_seconds * 1e9) as u64 + io.daemon_period_ms * 2_000_000;
        self.engine.advance_idle(ns).map_err(err)?;
        self.report.daemon_ticks += 1;
        self.audit()
    }

    fn step(&mut self) -> Result<(), String> {
        match self.rng.gen_range(0..1000) {
            0..=449 => self.write(),
            450..=699 => self.read(),
            700..=759 => {
                self.engine.flush().map_err(err)?;
                self.disk.persist_all();
                self.report.flushes += 1;
                self.audit()
            }
            760..=819 => {
                let (start, _) = self.run_len();
                let spp = self.engine.ftl().sectors_per_page() as u64;
                let lpn = start / spp;
                self.engine.sync_page(lpn as u32).map_err(err)?;
                self.disk.persist_range(lpn * spp, spp);
                self.report.syncs += 1;
                Ok(())
            }
            820..=869 => self.force_gc(),
            870..=949 => self.daemon_tick(),
            950..=974 => self.clean_restart(),
            _ => self.dirty_restart(),
        }
    }
}

/// Replays `cfg.ops` random operations against a fresh card and the shadow
/// device. Engine failures and failed audits end the run with `Err`; data
/// mismatches are counted in the report.
pub fn run_shadow(cfg: &ShadowConfig) -> Result<ShadowReport, String> {
    let g = geometry();
    let engine = Engine::start(&config(cfg.policy, cfg.seed, !cfg.threaded), device(&g)).map_err(err)?;
    let sectors = engine.ftl().num_sectors();
    let mut run = Run {
        cfg: cfg.clone(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        engine,
        disk: ShadowDisk::new(sectors),
        report: ShadowReport::default(),
    };
    for i in 0..cfg.ops {
        run.step().map_err(|e| format!("op {i}: {e}"))?;
        run.report.ops += 1;
    }
    run.clean_restart().map_err(|e| format!("final restart: {e}"))?;
    run.engine.shutdown(true).map_err(err)?;
    Ok(run.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crash_candidates_track_durability() {
        let mut d = ShadowDisk::new(16);
        assert_eq!(d.crash_candidates(3), vec![0]);
        let a = d.write(3);
        let b = d.write(3);
        assert_eq!(d.crash_candidates(3), vec![0, a, b]);
        d.persist_range(0, 8);
        assert_eq!(d.crash_candidates(3), vec![b]);
        let c = d.write(9);
        d.persist_range(0, 8);
        assert_eq!(d.crash_candidates(9), vec![0, c]);
        d.settle(9, 0);
        assert_eq!(d.current(9), 0);
        assert_eq!(d.crash_candidates(9), vec![0]);
    }

    #[test]
    fn short_shadow_run_is_clean() {
        let r = run_shadow(&ShadowConfig { seed: 7, ops: 300, policy: GcPolicy::Pllgc, threaded: false }).unwrap();
        assert_eq!(r.mismatches, 0, "{:?}", r.examples);
        assert_eq!(r.ops, 300);
    }
}
