use std::collections::BTreeMap;

const MAX_INTERVALS: usize = 512;

/// Busy intervals of one device resource (a bank or a DMA queue) on the
/// simulated clock.
///
/// Reservations are placed in the earliest gap at or after the requested
/// time, so an actor that books a long run of operations ahead of the clock
/// does not block an unrelated actor that arrives earlier in simulated time.
#[derive(Debug, Clone, Default)]
pub(crate) struct Timeline {
    busy: BTreeMap<u64, u64>,
    /// Nothing may be booked before this point; advances as old intervals
    /// are dropped.
    floor: u64,
}

impl Timeline {
    /// Books `dur` ns no earlier than `earliest`; returns `(start, end)`.
    pub fn reserve(&mut self, earliest: u64, dur: u64) -> (u64, u64) {
        let mut t = earliest.max(self.floor);
        if dur == 0 {
            return (t, t);
        }
        if let Some((_, &end)) = self.busy.range(..=t).next_back() {
            if end > t {
                t = end;
            }
        }
        for (&s, &e) in self.busy.range(t..) {
            if s >= t + dur {
                break;
            }
            t = t.max(e);
        }
        let mut start = t;
        let mut end = t + dur;
        // coalesce with touching neighbours
        if let Some((&ps, &pe)) = self.busy.range(..=start).next_back() {
            if pe == start {
                self.busy.remove(&ps);
                start = ps;
            }
        }
        if let Some(&ne) = self.busy.get(&end) {
            self.busy.remove(&end);
            end = ne;
        }
        self.busy.insert(start, end);
        while self.busy.len() > MAX_INTERVALS {
            let (&s, &e) = self.busy.iter().next().unwrap();
            self.busy.remove(&s);
            self.floor = self.floor.max(e);
        }
        (t, t + dur)
    }

    /// True when no reservation covers instant `t`.
    pub fn idle_at(&self, t: u64) -> bool {
        if t < self.floor {
            return false;
        }
        match self.busy.range(..=t).next_back() {
            Some((_, &e)) => e <= t,
            None => true,
        }
    }

    pub fn clear(&mut self) {
        self.busy.clear();
        self.floor = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn back_to_back_reservations_queue() {
        let mut t = Timeline::default();
        assert_eq!(t.reserve(0, 10), (0, 10));
        assert_eq!(t.reserve(0, 10), (10, 20));
        assert_eq!(t.reserve(5, 10), (20, 30));
        assert!(!t.idle_at(25));
        assert!(t.idle_at(30));
    }

    #[test]
    fn fills_gaps_left_by_future_bookings() {
        let mut t = Timeline::default();
        t.reserve(100, 10);
        t.reserve(200, 10);
        assert_eq!(t.reserve(0, 50), (0, 50));
        assert_eq!(t.reserve(0, 60), (110, 170));
        assert_eq!(t.reserve(0, 30), (50, 80));
    }

    #[test]
    fn bounded_history() {
        let mut t = Timeline::default();
        for i in 0..2000u64 {
            t.reserve(i * 100, 10);
        }
        assert!(t.busy.len() <= MAX_INTERVALS);
        let floor = t.floor;
        assert!(floor > 0);
        let (s, _) = t.reserve(0, 10);
        assert!(s >= floor);
    }
}
