use std::sync::atomic::{AtomicU32, Ordering};

use crossbeam::utils::Backoff;

use crate::sim_flash::{Lpn, Ppn};

/// Entry value of a logical page that has never been flushed.
pub const UNMAPPED: u32 = 0x7FFF_FFFF;
const LOCK_BIT: u32 = 1 << 31;
const PPN_MASK: u32 = !LOCK_BIT;

/// Logical to physical page map, 4 bytes per logical page.
///
/// The top bit of each entry is the entry's exclusion bit; the low 31 bits
/// hold the physical page number or [`UNMAPPED`]. Lookups never take the
/// bit. Changing an entry requires an [`EntryGuard`].
pub struct MapTable {
    entries: Box<[AtomicU32]>,
}

impl MapTable {
    pub fn new(len: u32) -> Self {
        MapTable { entries: (0..len).map(|_| AtomicU32::new(UNMAPPED)).collect() }
    }

    pub fn len(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, lpn: Lpn) -> Option<Ppn> {
        decode(self.entries[lpn.0 as usize].load(Ordering::Acquire))
    }

    /// Takes the entry's exclusion bit, spinning until it is free.
    pub fn lock(&self, lpn: Lpn) -> EntryGuard<'_> {
        let e = &self.entries[lpn.0 as usize];
        let backoff = Backoff::new();
        loop {
            let cur = e.fetch_or(LOCK_BIT, Ordering::Acquire);
            if cur & LOCK_BIT == 0 {
                return EntryGuard { entry: e };
            }
            backoff.snooze();
        }
    }

    pub fn try_lock(&self, lpn: Lpn) -> Option<EntryGuard<'_>> {
        let e = &self.entries[lpn.0 as usize];
        if e.fetch_or(LOCK_BIT, Ordering::Acquire) & LOCK_BIT == 0 {
            Some(EntryGuard { entry: e })
        } else {
            None
        }
    }

    pub fn is_locked(&self, lpn: Lpn) -> bool {
        self.entries[lpn.0 as usize].load(Ordering::Relaxed) & LOCK_BIT != 0
    }

    /// Raw entries without lock bits, for snapshots and audits.
    pub fn raw(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.load(Ordering::Acquire) & PPN_MASK).collect()
    }

    /// Overwrites every entry. Only valid while nothing else uses the table.
    pub(crate) fn load_raw(&self, raw: &[u32]) {
        for (e, &v) in self.entries.iter().zip(raw) {
            e.store(v & PPN_MASK, Ordering::Release);
        }
    }
}

fn decode(v: u32) -> Option<Ppn> {
    match v & PPN_MASK {
        UNMAPPED => None,
        p => Some(Ppn(p)),
    }
}

/// Holder of one map entry's exclusion bit; released on drop.
pub struct EntryGuard<'a> {
    entry: &'a AtomicU32,
}

impl EntryGuard<'_> {
    pub fn get(&self) -> Option<Ppn> {
        decode(self.entry.load(Ordering::Acquire))
    }

    /// Points the entry at `ppn`, returning the previous mapping.
    pub fn update(&self, ppn: Ppn) -> Option<Ppn> {
        debug_assert!(ppn.0 < UNMAPPED);
        self.swap(ppn.0)
    }

    pub fn clear(&self) -> Option<Ppn> {
        self.swap(UNMAPPED)
    }

    fn swap(&self, v: u32) -> Option<Ppn> {
        let prev = self.entry.swap(v | LOCK_BIT, Ordering::AcqRel);
        debug_assert!(prev & LOCK_BIT != 0, "map entry changed without its exclusion bit");
        decode(prev)
    }
}

impl Drop for EntryGuard<'_> {
    fn drop(&mut self) {
        self.entry.fetch_and(PPN_MASK, Ordering::Release);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    #[test]
    fn fresh_entries_unmapped() {
        let m = MapTable::new(16);
        assert!((0..16).all(|l| m.lookup(Lpn(l)).is_none()));
    }

    #[test]
    fn update_returns_previous() {
        let m = MapTable::new(16);
        let g = m.lock(Lpn(5));
        assert_eq!(g.update(Ppn(10)), None);
        assert_eq!(g.update(Ppn(11)), Some(Ppn(10)));
        assert!(m.is_locked(Lpn(5)));
        assert!(m.try_lock(Lpn(5)).is_none());
        drop(g);
        assert!(!m.is_locked(Lpn(5)));
        assert_eq!(m.lookup(Lpn(5)), Some(Ppn(11)));
        assert_eq!(m.raw()[5], 11);
    }

    #[test]
    fn entry_bit_is_exclusive() {
        let m = Arc::new(MapTable::new(4));
        let inside = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let m = m.clone();
                let inside = inside.clone();
                std::thread::spawn(move || {
                    for i in 0..2000u32 {
                        let g = m.lock(Lpn(1));
                        assert_eq!(inside.fetch_add(1, Ordering::SeqCst), 0);
                        g.update(Ppn(t * 10_000 + i));
                        inside.fetch_sub(1, Ordering::SeqCst);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(!m.is_locked(Lpn(1)));
    }

    #[test]
    fn disjoint_entries_independent() {
        let m = Arc::new(MapTable::new(64));
        let handles: Vec<_> = (0..8u32)
            .map(|t| {
                let m = m.clone();
                std::thread::spawn(move || {
                    for i in 0..8u32 {
                        let l = Lpn(t * 8 + i);
                        m.lock(l).update(Ppn(l.0 + 100));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!((0..64).all(|l| m.lookup(Lpn(l)) == Some(Ppn(l + 100))));
    }
}
