use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use crossbeam::utils::Backoff;

use crate::sim_flash::Lpn;

const NO_LPN: u32 = u32::MAX;

/// Which logical page each buffer slot holds.
///
/// Read without locks; a hit is only trusted after the slot lock has been
/// taken and the slot re-checked. Entries are written by the thread holding
/// the slot lock.
pub struct BufferLookupTable {
    slots: Box<[AtomicU32]>,
}

impl BufferLookupTable {
    pub fn new(slots: usize) -> Self {
        BufferLookupTable { slots: (0..slots).map(|_| AtomicU32::new(NO_LPN)).collect() }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Linear search for the slot holding `lpn`.
    pub fn find(&self, lpn: Lpn) -> Option<usize> {
        self.slots.iter().position(|s| s.load(Ordering::Acquire) == lpn.0)
    }

    pub fn get(&self, slot: usize) -> Option<Lpn> {
        match self.slots[slot].load(Ordering::Acquire) {
            NO_LPN => None,
            l => Some(Lpn(l)),
        }
    }

    pub fn set(&self, slot: usize, lpn: Option<Lpn>) {
        self.slots[slot].store(lpn.map_or(NO_LPN, |l| l.0), Ordering::Release);
    }

    /// First logical page found in two slots at once, if any.
    pub fn duplicate(&self) -> Option<Lpn> {
        let mut seen = std::collections::HashSet::new();
        (0..self.len()).filter_map(|s| self.get(s)).find(|l| !seen.insert(*l))
    }
}

/// One claim bit per logical page, guarding buffer allocation and flushing
/// of that page.
pub struct AllocBufBitmap {
    bits: Box<[AtomicU64]>,
}

impl AllocBufBitmap {
    pub fn new(lpns: u32) -> Self {
        AllocBufBitmap { bits: (0..lpns.div_ceil(64)).map(|_| AtomicU64::new(0)).collect() }
    }

    fn word(&self, lpn: Lpn) -> (&AtomicU64, u64) {
        (&self.bits[(lpn.0 / 64) as usize], 1 << (lpn.0 % 64))
    }

    /// Spins until the claim on `lpn` is ours.
    pub fn claim(&self, lpn: Lpn) -> Claim<'_> {
        let backoff = Backoff::new();
        loop {
            if let Some(c) = self.try_claim(lpn) {
                return c;
            }
            backoff.snooze();
        }
    }

    pub fn try_claim(&self, lpn: Lpn) -> Option<Claim<'_>> {
        let (w, m) = self.word(lpn);
        if w.fetch_or(m, Ordering::Acquire) & m == 0 {
            Some(Claim { map: self, lpn })
        } else {
            None
        }
    }

    pub fn is_claimed(&self, lpn: Lpn) -> bool {
        let (w, m) = self.word(lpn);
        w.load(Ordering::Acquire) & m != 0
    }

    pub fn any_claimed(&self) -> bool {
        self.bits.iter().any(|w| w.load(Ordering::Acquire) != 0)
    }

    fn release(&self, lpn: Lpn) {
        let (w, m) = self.word(lpn);
        let prev = w.fetch_and(!m, Ordering::Release);
        debug_assert!(prev & m != 0);
    }
}

/// A held claim; released on drop.
pub struct Claim<'a> {
    map: &'a AllocBufBitmap,
    lpn: Lpn,
}

impl Claim<'_> {
    pub fn lpn(&self) -> Lpn {
        self.lpn
    }
}

impl Drop for Claim<'_> {
    fn drop(&mut self) {
        self.map.release(self.lpn);
    }
}

/// Global write sequence counter. The first number handed out is 1.
#[derive(Default)]
pub struct SequenceCounter {
    last: AtomicU64,
}

impl SequenceCounter {
    pub fn next(&self) -> u64 {
        self.last.fetch_add(1, Ordering::AcqRel) + 1
    }

    /// Last number handed out (0 if none).
    pub fn current(&self) -> u64 {
        self.last.load(Ordering::Acquire)
    }

    /// Ensures future numbers exceed `seen`.
    pub fn observe(&self, seen: u64) {
        self.last.fetch_max(seen, Ordering::AcqRel);
    }

    pub(crate) fn set(&self, v: u64) {
        self.last.store(v, Ordering::Release);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    #[test]
    fn claim_release_claim() {
        let a = AllocBufBitmap::new(100);
        let c = a.claim(Lpn(70));
        assert!(a.is_claimed(Lpn(70)));
        assert!(a.try_claim(Lpn(70)).is_none());
        assert!(a.try_claim(Lpn(71)).is_some());
        drop(c);
        assert!(!a.any_claimed());
        let _c = a.claim(Lpn(70));
    }

    #[test]
    fn claim_stress_single_holder() {
        let a = Arc::new(AllocBufBitmap::new(8));
        let holders = Arc::new(AtomicUsize::new(0));
        let max_seen = Arc::new(AtomicUsize::new(0));
        let hs: Vec<_> = (0..6)
            .map(|_| {
                let (a, holders, max_seen) = (a.clone(), holders.clone(), max_seen.clone());
                std::thread::spawn(move || {
                    for _ in 0..3000 {
                        let _c = a.claim(Lpn(3));
                        let n = holders.fetch_add(1, Ordering::SeqCst) + 1;
                        max_seen.fetch_max(n, Ordering::SeqCst);
                        holders.fetch_sub(1, Ordering::SeqCst);
                    }
                })
            })
            .collect();
        for h in hs {
            h.join().unwrap();
        }
        assert_eq!(max_seen.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn lookup_find_and_duplicates() {
        let t = BufferLookupTable::new(4);
        assert_eq!(t.find(Lpn(9)), None);
        t.set(2, Some(Lpn(9)));
        assert_eq!(t.find(Lpn(9)), Some(2));
        assert_eq!(t.duplicate(), None);
        t.set(3, Some(Lpn(9)));
        assert_eq!(t.duplicate(), Some(Lpn(9)));
        t.set(2, None);
        assert_eq!(t.get(2), None);
    }

    #[test]
    fn sequence_starts_at_one_and_is_unique() {
        let s = Arc::new(SequenceCounter::default());
        assert_eq!(s.next(), 1);
        let hs: Vec<_> = (0..4)
            .map(|_| {
                let s = s.clone();
                std::thread::spawn(move || (0..1000).map(|_| s.next()).collect::<Vec<_>>())
            })
            .collect();
        let mut all: Vec<u64> = hs.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 4000);
        s.observe(10_000);
        assert_eq!(s.next(), 10_001);
        s.observe(5);
        assert_eq!(s.next(), 10_002);
    }
}
