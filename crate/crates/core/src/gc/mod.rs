//! Bank-local greedy garbage collection: level table, victim choice, block
//! collection, the inline (NPGC) path and background collector rounds with
//! adaptive throttling.

mod collect;
mod events;
mod levels;
mod policy;
mod worker;

use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

pub use collect::Collection;
pub use events::{write_csv as write_event_csv, GcEvent, GcEventKind, GcEventLog, GC_EVENT_HEADER};
pub use levels::{GcLevel, GcLevelTable};
pub use policy::{AdaptiveMap, AdaptiveRange, GcPolicy};
pub use worker::{GcStep, GcWorkerState};

const NO_BANK: u32 = u32::MAX;

/// Shared collector coordination: how many collectors may run, and which
/// bank writers must leave alone.
pub struct GcController {
    max_threads: usize,
    permitted: AtomicUsize,
    exclusive: AtomicU32,
}

impl GcController {
    pub fn new(max_threads: usize) -> Self {
        GcController {
            max_threads,
            permitted: AtomicUsize::new(max_threads.max(1)),
            exclusive: AtomicU32::new(NO_BANK),
        }
    }

    pub fn max_threads(&self) -> usize {
        self.max_threads
    }

    /// Collectors allowed to run by the last master decision.
    pub fn permitted(&self) -> usize {
        self.permitted.load(Ordering::Acquire)
    }

    pub(crate) fn set_permitted(&self, n: usize) -> usize {
        self.permitted.swap(n, Ordering::AcqRel)
    }

    pub fn exclusive_bank(&self) -> Option<u32> {
        let b = self.exclusive.load(Ordering::Acquire);
        (b != NO_BANK).then_some(b)
    }

    pub(crate) fn set_exclusive_bank(&self, bank: Option<u32>) {
        self.exclusive.store(bank.unwrap_or(NO_BANK), Ordering::Release);
    }
}
