use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::sim_flash::DeviceStats;

macro_rules! counters {
    ($(#[$m:meta])* $name:ident, $snap:ident { $($(#[$fm:meta])* $f:ident),* $(,)? }) => {
        $(#[$m])*
        #[derive(Default)]
        pub struct $name {
            $(pub $f: AtomicU64,)*
        }

        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        pub struct $snap {
            $($(#[$fm])* pub $f: u64,)*
        }

        impl $name {
            pub fn snapshot(&self) -> $snap {
                $snap { $($f: self.$f.load(Ordering::Relaxed),)* }
            }

            pub fn reset(&self) {
                $(self.$f.store(0, Ordering::Relaxed);)*
            }
        }
    };
}

counters!(
    /// Running counters of the IO path.
    IoCounters, IoStats {
        user_sectors_written,
        user_sectors_read,
        cache_hits,
        cache_misses,
        /// Flash pages programmed on behalf of host data.
        user_pages_programmed,
        /// Dirty sectors carried by those programs.
        user_sectors_flushed,
        /// Partial pages completed from flash before programming.
        merges,
        evictions,
        sync_flushes,
        daemon_flushes,
        barrier_flushes,
        checkpoint_pages,
        blocks_opened,
    }
);

counters!(
    /// Running counters of garbage collection.
    GcCounters, GcStats {
        blocks_collected,
        valid_pages_copied,
        erases_performed,
        worker_rounds,
        idle_polls,
        npgc_collections,
        emergency_collections,
        exclusive_sets,
    }
);

/// Merged counters of the engine, its collectors and the card.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub io: IoStats,
    pub gc: GcStats,
    pub device: DeviceStats,
    /// Pages programmed per page-equivalent of host data; at least 1.
    pub write_amplification: f64,
    pub valid_pages: u64,
    pub free_blocks: u64,
}

impl EngineStats {
    /// Total programs (host, GC copies, checkpoint) over the page-equivalents
    /// of host sectors they carried. 1.0 when nothing has been flushed.
    pub fn compute_wa(io: &IoStats, gc: &GcStats, sectors_per_page: u32) -> f64 {
        if io.user_sectors_flushed == 0 {
            return 1.0;
        }
        let total = io.user_pages_programmed + gc.valid_pages_copied + io.checkpoint_pages;
        total as f64 * sectors_per_page as f64 / io.user_sectors_flushed as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wa_is_one_for_full_page_flushes() {
        let io = IoStats { user_pages_programmed: 10, user_sectors_flushed: 80, ..Default::default() };
        assert_eq!(EngineStats::compute_wa(&io, &GcStats::default(), 8), 1.0);
        let gc = GcStats { valid_pages_copied: 5, ..Default::default() };
        assert_eq!(EngineStats::compute_wa(&io, &gc, 8), 1.5);
        let partial = IoStats { user_pages_programmed: 1, user_sectors_flushed: 2, ..Default::default() };
        assert_eq!(EngineStats::compute_wa(&partial, &GcStats::default(), 8), 4.0);
        assert_eq!(EngineStats::compute_wa(&IoStats::default(), &GcStats::default(), 8), 1.0);
    }

    #[test]
    fn counters_snapshot_and_reset() {
        let c = IoCounters::default();
        c.merges.fetch_add(3, Ordering::Relaxed);
        assert_eq!(c.snapshot().merges, 3);
        c.reset();
        assert_eq!(c.snapshot(), IoStats::default());
    }
}
