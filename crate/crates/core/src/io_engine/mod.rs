//! Host-facing IO path: requests, the write-back buffer pool, the read and
//! write algorithms and the idle-flush daemon.

mod alloc;
mod buffer;

use std::sync::atomic::Ordering;

use parking_lot::MutexGuard;

pub use buffer::{BufferPool, DetachedPage, SlotInner, SlotState};

use crate::config::Dispatch;
use crate::error::{Error, Result};
use crate::ftl::Ftl;
use crate::sim_flash::Lpn;
use crate::time::SimTime;

pub type RequestId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IoKind {
    Write { lsn: u64, data: Vec<u8> },
    Read { lsn: u64 },
    /// Persists one logical page, as an fsync of the data it holds.
    SyncPage { lpn: u32 },
    /// Persists every buffer.
    Barrier,
}

impl IoKind {
    pub fn is_write(&self) -> bool {
        matches!(self, IoKind::Write { .. })
    }
}

#[derive(Debug, Clone)]
pub struct IoRequest {
    pub id: RequestId,
    /// Submitting client, used to route the completion back.
    pub client: usize,
    pub kind: IoKind,
    pub submitted: SimTime,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub id: RequestId,
    pub client: usize,
    pub submitted: SimTime,
    pub completed: SimTime,
    /// Read data for reads, `None` for everything else.
    pub result: Result<Option<Vec<u8>>>,
}

impl Completion {
    pub fn latency_ns(&self) -> u64 {
        self.completed.since(self.submitted)
    }
}

/// Submission queue for a request. Sector requests and page syncs follow
/// their logical page so that all work on one page meets one worker.
pub fn dispatch(kind: &IoKind, policy: Dispatch, queues: usize, sectors_per_page: u32, seq: u64) -> usize {
    let lpn = match kind {
        IoKind::Write { lsn, .. } | IoKind::Read { lsn } => Some(lsn / sectors_per_page as u64),
        IoKind::SyncPage { lpn } => Some(*lpn as u64),
        IoKind::Barrier => None,
    };
    match (policy, lpn) {
        (Dispatch::LpnMod, Some(l)) => (l % queues as u64) as usize,
        (Dispatch::LpnMod, None) => 0,
        (Dispatch::RoundRobin, _) => (seq % queues as u64) as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FlushCause {
    Evict,
    Sync,
    Daemon,
    Barrier,
}

impl Ftl {
    /// Runs one request as a worker would, starting at `now`. Returns the
    /// result and the instant the worker is done with it.
    pub fn execute(&self, kind: &IoKind, now: SimTime) -> (Result<Option<Vec<u8>>>, SimTime) {
        let now = now + self.cfg.io.cpu_op_ns;
        match kind {
            IoKind::Write { lsn, data } => match self.write_sector(*lsn, data, now) {
                Ok(t) => (Ok(None), t),
                Err(e) => (Err(e), now),
            },
            IoKind::Read { lsn } => match self.read_sector(*lsn, now) {
                Ok((d, t)) => (Ok(Some(d)), t),
                Err(e) => (Err(e), now),
            },
            IoKind::SyncPage { lpn } => match self.flush_lpn(Lpn(*lpn), now) {
                Ok(t) => (Ok(None), t),
                Err(e) => (Err(e), now),
            },
            IoKind::Barrier => match self.flush_all(now) {
                Ok(t) => (Ok(None), t),
                Err(e) => (Err(e), now),
            },
        }
    }

    /// Buffers one sector write. Returns when the worker is free again,
    /// which includes flushing an evicted page.
    pub fn write_sector(&self, lsn: u64, data: &[u8], now: SimTime) -> Result<SimTime> {
        let (lpn, sector) = self.split_lsn(lsn)?;
        if data.len() != self.sector_size() as usize {
            return Err(Error::Config(format!("sector payload must be {} bytes", self.sector_size())));
        }
        let mut now = now;
        let mut backoff = 0u64;
        loop {
            if let Some(idx) = self.state.lookup.find(lpn) {
                let mut inner = self.pool.lock(idx);
                if inner.lpn == Some(lpn) {
                    self.pool.write_sector(&mut inner, sector, data, now);
                    self.pool.publish(idx, &mut inner);
                    self.io.user_sectors_written.fetch_add(1, Ordering::Relaxed);
                    self.io.cache_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(now);
                }
                continue;
            }
            let claim = self.state.claims.claim(lpn);
            if self.state.lookup.find(lpn).is_some() {
                drop(claim);
                continue;
            }
            match self.select_buffer(now)? {
                Some((idx, mut inner, t)) => {
                    inner.lpn = Some(lpn);
                    self.state.lookup.set(idx, Some(lpn));
                    self.pool.write_sector(&mut inner, sector, data, t);
                    self.pool.publish(idx, &mut inner);
                    drop(inner);
                    drop(claim);
                    self.io.user_sectors_written.fetch_add(1, Ordering::Relaxed);
                    self.io.cache_misses.fetch_add(1, Ordering::Relaxed);
                    return Ok(t);
                }
                None => {
                    drop(claim);
                    backoff = (backoff * 2).clamp(10_000, self.cfg.io.max_backoff_us * 1000);
                    now = now + backoff;
                    std::thread::yield_now();
                }
            }
        }
    }

    /// Picks a buffer for a new page: an empty one, else a full one, else
    /// the least recently used partial one. A victim is flushed before it
    /// is handed out. Returns the slot locked and empty, or `None` when
    /// every candidate is held by another thread.
    fn select_buffer(&self, now: SimTime) -> Result<Option<(usize, MutexGuard<'_, SlotInner>, SimTime)>> {
        while let Some(idx) = self.pool.pop_empty() {
            let mut inner = self.pool.lock(idx);
            inner.queued = None;
            if inner.lpn.is_none() {
                return Ok(Some((idx, inner, now)));
            }
            self.pool.publish(idx, &mut inner);
        }
        for _ in 0..self.pool.len() {
            let Some(idx) = self.pool.pop_full() else { break };
            let mut inner = self.pool.lock(idx);
            inner.queued = None;
            let Some(victim) = inner.lpn else {
                return Ok(Some((idx, inner, now)));
            };
            if let Some(vc) = self.state.claims.try_claim(victim) {
                let res = self.flush_slot(idx, &mut inner, now, FlushCause::Evict);
                drop(vc);
                match res {
                    Ok(t) => return Ok(Some((idx, inner, t))),
                    Err(e) => {
                        self.pool.requeue(idx, &mut inner);
                        return Err(e);
                    }
                }
            }
            self.pool.requeue(idx, &mut inner);
        }
        for idx in self.pool.partials_by_age() {
            let Some(mut inner) = self.pool.try_lock(idx) else { continue };
            if inner.queued.is_some() {
                continue;
            }
            let Some(victim) = inner.lpn else { continue };
            let Some(vc) = self.state.claims.try_claim(victim) else { continue };
            let t = self.flush_slot(idx, &mut inner, now, FlushCause::Evict)?;
            drop(vc);
            return Ok(Some((idx, inner, t)));
        }
        Ok(None)
    }

    /// Writes the page held by a locked slot to flash and empties the slot.
    /// The caller holds the allocation claim of the page. On failure the
    /// slot is left as it was. An evicted slot is not published, since the
    /// caller refills it at once.
    fn flush_slot(&self, idx: usize, inner: &mut SlotInner, now: SimTime, cause: FlushCause) -> Result<SimTime> {
        let lpn = inner.lpn.expect("flushing an empty slot");
        let mut page = inner.data.to_vec();
        let t = self.write_logical_page(lpn, &mut page, inner.dirty, now)?;
        self.pool.detach(inner);
        self.state.lookup.set(idx, None);
        if cause != FlushCause::Evict {
            self.pool.publish(idx, inner);
        }
        let c = match cause {
            FlushCause::Evict => &self.io.evictions,
            FlushCause::Sync => &self.io.sync_flushes,
            FlushCause::Daemon => &self.io.daemon_flushes,
            FlushCause::Barrier => &self.io.barrier_flushes,
        };
        c.fetch_add(1, Ordering::Relaxed);
        Ok(t)
    }

    /// Programs a logical page: merges sectors missing from `dirty` with the
    /// current flash copy, writes it to a fresh physical page and swaps the
    /// map entry.
    pub(crate) fn write_logical_page(&self, lpn: Lpn, page: &mut [u8], dirty: u64, now: SimTime) -> Result<SimTime> {
        let (bank, mut t) = self.select_bank(now)?;
        if self.cfg.gc.policy == crate::gc::GcPolicy::Npgc {
            t = self.npgc_before_write(bank, t)?;
        }
        let entry = self.state.map.lock(lpn);
        let old = entry.get();
        if dirty != self.pool.full_mask() {
            if let Some(old) = old {
                let out = self.dev.read_full(self.geometry().address(old), t)?;
                let ss = self.sector_size() as usize;
                for s in 0..self.sectors_per_page() as usize {
                    if dirty >> s & 1 == 0 {
                        page[s * ss..(s + 1) * ss].copy_from_slice(&out.data[s * ss..(s + 1) * ss]);
                    }
                }
                t = out.completion.completed_at;
                self.io.merges.fetch_add(1, Ordering::Relaxed);
            }
        }
        let (ppn, done) = self.program_user_page(bank, lpn, page, t)?;
        entry.update(ppn);
        self.state.mark_valid(ppn);
        if let Some(old) = old {
            self.state.mark_invalid(old);
        }
        drop(entry);
        self.io.user_pages_programmed.fetch_add(1, Ordering::Relaxed);
        self.io.user_sectors_flushed.fetch_add(dirty.count_ones() as u64, Ordering::Relaxed);
        Ok(done)
    }

    /// Reads one sector: from a buffer holding it dirty, else from flash,
    /// else zeros.
    pub fn read_sector(&self, lsn: u64, now: SimTime) -> Result<(Vec<u8>, SimTime)> {
        let (lpn, sector) = self.split_lsn(lsn)?;
        self.io.user_sectors_read.fetch_add(1, Ordering::Relaxed);
        loop {
            if let Some(idx) = self.state.lookup.find(lpn) {
                let inner = self.pool.lock(idx);
                if inner.lpn != Some(lpn) {
                    continue;
                }
                if inner.dirty >> sector & 1 == 1 {
                    self.io.cache_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok((self.pool.read_sector(&inner, sector), now));
                }
                self.io.cache_misses.fetch_add(1, Ordering::Relaxed);
                return self.read_flash_sector(lpn, sector, now);
            }
            let claim = self.state.claims.claim(lpn);
            if self.state.lookup.find(lpn).is_some() {
                drop(claim);
                continue;
            }
            self.io.cache_misses.fetch_add(1, Ordering::Relaxed);
            return self.read_flash_sector(lpn, sector, now);
        }
    }

    fn read_flash_sector(&self, lpn: Lpn, sector: u32, now: SimTime) -> Result<(Vec<u8>, SimTime)> {
        let entry = self.state.map.lock(lpn);
        match entry.get() {
            None => Ok((vec![0u8; self.sector_size() as usize], now)),
            Some(ppn) => {
                let ss = self.sector_size();
                let out = self.dev.read_page(self.geometry().address(ppn), sector * ss, ss, false, now)?;
                Ok((out.data, out.completion.completed_at))
            }
        }
    }

    /// Persists one logical page if a buffer holds it.
    pub fn flush_lpn(&self, lpn: Lpn, now: SimTime) -> Result<SimTime> {
        self.state.check_lpn(lpn)?;
        self.flush_if(lpn, now, FlushCause::Sync, |_| true).map(|r| r.unwrap_or(now))
    }

    /// Flushes `lpn` if a buffer holds it and `pred` accepts the slot.
    /// `Ok(None)` when nothing was flushed.
    fn flush_if(
        &self,
        lpn: Lpn,
        now: SimTime,
        cause: FlushCause,
        pred: impl Fn(&SlotInner) -> bool,
    ) -> Result<Option<SimTime>> {
        let claim = self.state.claims.claim(lpn);
        let Some(idx) = self.state.lookup.find(lpn) else { return Ok(None) };
        let mut inner = self.pool.lock(idx);
        if inner.lpn != Some(lpn) || !pred(&inner) {
            return Ok(None);
        }
        let t = self.flush_slot(idx, &mut inner, now, cause)?;
        drop(inner);
        drop(claim);
        Ok(Some(t))
    }

    /// Persists every buffered page. Pages that could not be written are
    /// listed in [`Error::FlushIncomplete`].
    pub fn flush_all(&self, now: SimTime) -> Result<SimTime> {
        self.flush_all_with(now, FlushCause::Barrier)
    }

    fn flush_all_with(&self, now: SimTime, cause: FlushCause) -> Result<SimTime> {
        let mut t = now;
        let mut failed = Vec::new();
        for idx in 0..self.pool.len() {
            let Some(lpn) = self.state.lookup.get(idx) else { continue };
            match self.flush_if(lpn, t, cause, |_| true) {
                Ok(Some(done)) => t = t.max(done),
                Ok(None) => {}
                Err(Error::Device(e)) if e == crate::DeviceError::Halted => return Err(e.into()),
                Err(e) => {
                    log::warn!("flush of {lpn} failed: {e}");
                    failed.push(lpn.0);
                }
            }
        }
        if failed.is_empty() {
            Ok(t)
        } else {
            Err(Error::FlushIncomplete(failed))
        }
    }

    /// Flushes every buffer untouched for longer than the idle threshold.
    /// Failures are logged and retried on the next tick. Returns when the
    /// daemon is done.
    pub fn daemon_tick(&self, now: SimTime) -> SimTime {
        let limit = SimTime::from_secs(self.cfg.io.idle_flush_seconds).as_ns();
        let mut t = now;
        for idx in 0..self.pool.len() {
            if self.pool.state_hint(idx) == SlotState::Empty {
                continue;
            }
            if now.since(self.pool.last_access_hint(idx)) <= limit {
                continue;
            }
            let Some(lpn) = self.state.lookup.get(idx) else { continue };
            let idle = |s: &SlotInner| now.since(s.last_access) > limit;
            match self.flush_if(lpn, t, FlushCause::Daemon, idle) {
                Ok(Some(done)) => t = t.max(done),
                Ok(None) => {}
                Err(e) => log::warn!("idle flush of {lpn} failed: {e}"),
            }
        }
        t
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftl::testing::{ftl_with, sector};
    use crate::sim_flash::FlashGeometry;

    #[test]
    fn lpn_dispatch_keeps_pages_together_and_spreads_them() {
        let mut per_queue = [0; 64];
        for lsn in 0..64 {
            per_queue[dispatch(&IoKind::Read { lsn }, Dispatch::LpnMod, 64, 8, 0)] += 1;
        }
        // 8 pages of 8 sectors: 8 queues, one page each
        assert_eq!(per_queue.iter().filter(|&&n| n == 8).count(), 8);
        assert_eq!(per_queue.iter().sum::<i32>(), 64);
        assert_eq!(dispatch(&IoKind::SyncPage { lpn: 70 }, Dispatch::LpnMod, 64, 8, 0), 6);
        let rr: Vec<usize> = (0..5).map(|s| dispatch(&IoKind::Read { lsn: 0 }, Dispatch::RoundRobin, 4, 8, s)).collect();
        assert_eq!(rr, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn eight_sector_writes_fill_one_slot_and_program_once() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        let mut t = SimTime::ZERO;
        for lsn in 16..24 {
            t = f.write_sector(lsn, &sector(lsn, 1), t).unwrap();
        }
        assert_eq!(f.pool.class_counts(), (3, 0, 1));
        let s = f.stats();
        assert_eq!((s.io.cache_misses, s.io.cache_hits), (1, 7));
        assert_eq!(s.device.pages_written, 0);
        let t = f.flush_all(t).unwrap();
        let s = f.stats();
        assert_eq!((s.io.user_pages_programmed, s.io.merges, s.device.pages_written), (1, 0, 1));
        // nothing left to flush
        f.flush_all(t).unwrap();
        assert_eq!(f.stats().device.pages_written, 1);
        f.audit().unwrap();
    }

    #[test]
    fn partial_eviction_merges_missing_sectors_from_flash() {
        let f = ftl_with(FlashGeometry::tiny(), |c| c.io.num_buffers = 1);
        let mut t = SimTime::ZERO;
        for lsn in 16..24 {
            t = f.write_sector(lsn, &sector(lsn, 1), t).unwrap();
        }
        t = f.flush_all(t).unwrap();
        for lsn in [16, 19, 21] {
            t = f.write_sector(lsn, &sector(lsn, 2), t).unwrap();
        }
        // a second page needs the only buffer
        t = f.write_sector(40, &sector(40, 1), t).unwrap();
        let s = f.stats();
        assert_eq!((s.io.evictions, s.io.merges), (1, 1));
        for lsn in 16..24 {
            let tag = if [16, 19, 21].contains(&lsn) { 2 } else { 1 };
            assert_eq!(f.read_sector(lsn, t).unwrap().0, sector(lsn, tag), "lsn {lsn}");
        }
        f.audit().unwrap();
    }

    #[test]
    fn reads_see_buffer_then_flash_and_zeros_when_unwritten() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        assert_eq!(f.read_sector(5, SimTime::ZERO).unwrap().0, vec![0; 512]);
        let t = f.write_sector(5, &sector(5, 3), SimTime::ZERO).unwrap();
        let (d, t2) = f.read_sector(5, t).unwrap();
        assert_eq!((d, t2), (sector(5, 3), t));
        // other sectors of the buffered page are not dirty and come from flash
        assert_eq!(f.read_sector(6, t).unwrap().0, vec![0; 512]);
        let t = f.flush_all(t).unwrap();
        let (d, t2) = f.read_sector(5, t).unwrap();
        assert_eq!(d, sector(5, 3));
        assert!(t2 > t, "flash read takes time");
        assert!(f.read_sector(f.num_sectors(), t).is_err());
    }

    #[test]
    fn daemon_flushes_only_slots_idle_past_the_threshold() {
        let f = ftl_with(FlashGeometry::tiny(), |c| c.io.idle_flush_seconds = 60.0);
        assert_eq!(f.daemon_tick(SimTime::from_secs(5.0)), SimTime::from_secs(5.0));
        f.write_sector(0, &sector(0, 1), SimTime::ZERO).unwrap();
        f.write_sector(8, &sector(8, 1), SimTime::from_secs(51.0)).unwrap();
        f.daemon_tick(SimTime::from_secs(61.0));
        assert_eq!(f.stats().io.daemon_flushes, 1);
        assert!(f.state.lookup.find(Lpn(0)).is_none());
        assert!(f.state.lookup.find(Lpn(1)).is_some());
        assert!(f.state.map.lookup(Lpn(0)).is_some());
        f.audit().unwrap();
    }

    #[test]
    fn sync_page_persists_only_that_page() {
        let f = ftl_with(FlashGeometry::tiny(), |_| {});
        let t = f.write_sector(0, &sector(0, 1), SimTime::ZERO).unwrap();
        let t = f.write_sector(8, &sector(8, 1), t).unwrap();
        f.flush_lpn(Lpn(1), t).unwrap();
        assert!(f.state.map.lookup(Lpn(1)).is_some());
        assert!(f.state.map.lookup(Lpn(0)).is_none());
        assert_eq!(f.stats().io.sync_flushes, 1);
        // syncing a page that is not buffered does nothing
        f.flush_lpn(Lpn(3), t).unwrap();
        assert_eq!(f.stats().io.sync_flushes, 1);
    }
}
