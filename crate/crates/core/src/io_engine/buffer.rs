use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};

use crossbeam::queue::SegQueue;
use parking_lot::{Mutex, MutexGuard};

use crate::sim_flash::Lpn;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Empty,
    Partial,
    Full,
}

impl SlotState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => SlotState::Empty,
            1 => SlotState::Partial,
            _ => SlotState::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PoolQueue {
    Empty,
    Full,
}

/// Contents of a buffer slot, only touched under the slot lock.
pub struct SlotInner {
    pub lpn: Option<Lpn>,
    pub data: Box<[u8]>,
    /// One bit per sector written since the slot was assigned.
    pub dirty: u64,
    pub last_access: SimTime,
    /// Which pool queue currently lists this slot.
    pub(crate) queued: Option<PoolQueue>,
}

pub struct BufferSlot {
    inner: Mutex<SlotInner>,
    state: AtomicU8,
    last_access: AtomicU64,
}

/// Page-sized write-back buffers with empty and full index queues.
/// Partial slots sit in neither queue.
pub struct BufferPool {
    slots: Vec<BufferSlot>,
    empty: SegQueue<usize>,
    full: SegQueue<usize>,
    page_size: usize,
    sector_size: usize,
    full_mask: u64,
}

/// Page contents taken out of a slot on eviction or flush.
pub struct DetachedPage {
    pub lpn: Lpn,
    pub data: Box<[u8]>,
    pub dirty: u64,
}

impl BufferPool {
    pub fn new(count: usize, page_size: u32, sector_size: u32) -> Self {
        let spp = page_size / sector_size;
        let pool = BufferPool {
            slots: (0..count)
                .map(|_| BufferSlot {
                    inner: Mutex::new(SlotInner {
                        lpn: None,
                        data: vec![0u8; page_size as usize].into_boxed_slice(),
                        dirty: 0,
                        last_access: SimTime::ZERO,
                        queued: Some(PoolQueue::Empty),
                    }),
                    state: AtomicU8::new(0),
                    last_access: AtomicU64::new(0),
                })
                .collect(),
            empty: SegQueue::new(),
            full: SegQueue::new(),
            page_size: page_size as usize,
            sector_size: sector_size as usize,
            full_mask: if spp == 64 { u64::MAX } else { (1u64 << spp) - 1 },
        };
        for i in 0..count {
            pool.empty.push(i);
        }
        pool
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn full_mask(&self) -> u64 {
        self.full_mask
    }

    pub fn lock(&self, idx: usize) -> MutexGuard<'_, SlotInner> {
        self.slots[idx].inner.lock()
    }

    pub fn try_lock(&self, idx: usize) -> Option<MutexGuard<'_, SlotInner>> {
        self.slots[idx].inner.try_lock()
    }

    /// Lock-free view of a slot's class; may be stale.
    pub fn state_hint(&self, idx: usize) -> SlotState {
        SlotState::from_u8(self.slots[idx].state.load(Ordering::Acquire))
    }

    pub fn last_access_hint(&self, idx: usize) -> SimTime {
        SimTime(self.slots[idx].last_access.load(Ordering::Acquire))
    }

    fn classify(&self, inner: &SlotInner) -> SlotState {
        match (inner.lpn, inner.dirty) {
            (None, _) => SlotState::Empty,
            (Some(_), d) if d == self.full_mask => SlotState::Full,
            _ => SlotState::Partial,
        }
    }

    /// Publishes the slot's class and queues it if it just became empty or
    /// full. Call after every change made under the slot lock.
    pub(crate) fn publish(&self, idx: usize, inner: &mut SlotInner) {
        let st = self.classify(inner);
        let s = &self.slots[idx];
        s.state.store(st as u8, Ordering::Release);
        s.last_access.store(inner.last_access.0, Ordering::Release);
        if inner.queued.is_none() {
            match st {
                SlotState::Empty => {
                    inner.queued = Some(PoolQueue::Empty);
                    self.empty.push(idx);
                }
                SlotState::Full => {
                    inner.queued = Some(PoolQueue::Full);
                    self.full.push(idx);
                }
                SlotState::Partial => {}
            }
        }
    }

    pub(crate) fn pop_empty(&self) -> Option<usize> {
        self.empty.pop()
    }

    pub(crate) fn pop_full(&self) -> Option<usize> {
        self.full.pop()
    }

    /// Puts a popped slot back at the tail of its queue.
    pub(crate) fn requeue(&self, idx: usize, inner: &mut SlotInner) {
        inner.queued = None;
        self.publish(idx, inner);
    }

    /// Partial slots ordered from least to most recently accessed, by the
    /// lock-free hints.
    pub(crate) fn partials_by_age(&self) -> Vec<usize> {
        let mut v: Vec<usize> =
            (0..self.slots.len()).filter(|&i| self.state_hint(i) == SlotState::Partial).collect();
        v.sort_by_key(|&i| (self.last_access_hint(i), i));
        v
    }

    pub fn write_sector(&self, inner: &mut SlotInner, sector: u32, data: &[u8], now: SimTime) {
        let off = sector as usize * self.sector_size;
        inner.data[off..off + self.sector_size].copy_from_slice(data);
        inner.dirty |= 1 << sector;
        inner.last_access = now;
    }

    pub fn read_sector(&self, inner: &SlotInner, sector: u32) -> Vec<u8> {
        let off = sector as usize * self.sector_size;
        inner.data[off..off + self.sector_size].to_vec()
    }

    /// Takes the page out of a slot, leaving it empty.
    pub(crate) fn detach(&self, inner: &mut SlotInner) -> Option<DetachedPage> {
        let lpn = inner.lpn.take()?;
        let data = std::mem::replace(&mut inner.data, vec![0u8; self.page_size].into_boxed_slice());
        let dirty = std::mem::take(&mut inner.dirty);
        Some(DetachedPage { lpn, data, dirty })
    }

    /// Queue membership, for audits: (in empty queue, in full queue) counts
    /// per slot. Requires quiescence.
    pub fn queue_audit(&self) -> Result<(), String> {
        let mut seen = vec![0u8; self.slots.len()];
        let drain = |q: &SegQueue<usize>| {
            let mut v = Vec::new();
            while let Some(i) = q.pop() {
                v.push(i);
            }
            v
        };
        let e = drain(&self.empty);
        let f = drain(&self.full);
        for &i in e.iter().chain(&f) {
            seen[i] += 1;
        }
        let result = (|| {
            for (i, &n) in seen.iter().enumerate() {
                if n > 1 {
                    return Err(format!("buffer {i} listed in {n} queues"));
                }
                let inner = self.slots[i].inner.lock();
                let listed = n == 1;
                if listed != inner.queued.is_some() {
                    return Err(format!("buffer {i} queue marker out of step"));
                }
                let st = self.classify(&inner);
                if st != self.state_hint(i) {
                    return Err(format!("buffer {i} state hint stale"));
                }
                if inner.lpn.is_none() && inner.dirty != 0 {
                    return Err(format!("buffer {i} has dirty sectors but no page"));
                }
            }
            Ok(())
        })();
        for i in e {
            self.empty.push(i);
        }
        for i in f {
            self.full.push(i);
        }
        result
    }

    /// Counts of empty, partial and full slots by the hints.
    pub fn class_counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for i in 0..self.slots.len() {
            match self.state_hint(i) {
                SlotState::Empty => c.0 += 1,
                SlotState::Partial => c.1 += 1,
                SlotState::Full => c.2 += 1,
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_pool_all_empty() {
        let p = BufferPool::new(4, 4096, 512);
        assert_eq!(p.class_counts(), (4, 0, 0));
        assert_eq!(p.full_mask(), 0xFF);
        p.queue_audit().unwrap();
    }

    #[test]
    fn fills_to_full_and_queues_once() {
        let p = BufferPool::new(2, 4096, 512);
        let idx = p.pop_empty().unwrap();
        let mut g = p.lock(idx);
        g.queued = None;
        g.lpn = Some(Lpn(3));
        for s in 0..8 {
            p.write_sector(&mut g, s, &[s as u8; 512], SimTime(s as u64));
            p.publish(idx, &mut g);
        }
        assert_eq!(p.state_hint(idx), SlotState::Full);
        assert_eq!(p.read_sector(&g, 5), vec![5u8; 512]);
        drop(g);
        p.queue_audit().unwrap();
        assert_eq!(p.pop_full(), Some(idx));
        assert_eq!(p.pop_full(), None);
    }

    #[test]
    fn detach_leaves_slot_empty() {
        let p = BufferPool::new(1, 4096, 512);
        let idx = p.pop_empty().unwrap();
        let mut g = p.lock(idx);
        g.queued = None;
        g.lpn = Some(Lpn(1));
        p.write_sector(&mut g, 2, &[9; 512], SimTime(1));
        p.publish(idx, &mut g);
        assert_eq!(p.state_hint(idx), SlotState::Partial);
        let d = p.detach(&mut g).unwrap();
        p.publish(idx, &mut g);
        assert_eq!(d.dirty, 0b100);
        assert_eq!(d.data[1024], 9);
        assert!(g.data.iter().all(|&b| b == 0));
        drop(g);
        assert_eq!(p.state_hint(idx), SlotState::Empty);
        p.queue_audit().unwrap();
    }

    #[test]
    fn partials_ordered_by_last_access() {
        let p = BufferPool::new(3, 4096, 512);
        for (t, lpn) in [(30u64, 0u32), (10, 1), (20, 2)] {
            let idx = p.pop_empty().unwrap();
            let mut g = p.lock(idx);
            g.queued = None;
            g.lpn = Some(Lpn(lpn));
            p.write_sector(&mut g, 0, &[0; 512], SimTime(t));
            p.publish(idx, &mut g);
        }
        assert_eq!(p.partials_by_age(), vec![1, 2, 0]);
    }
}
