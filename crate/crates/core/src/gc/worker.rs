use std::sync::atomic::Ordering;

use crate::error::{Error, Result};
use crate::ftl::Ftl;
use crate::time::SimTime;

use super::{Collection, GcEventKind, GcPolicy};

/// Outcome of one scheduling step of a background collector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcStep {
    /// Device work issued; the collector is busy until `until`.
    Worked { until: SimTime },
    /// No bank needs collecting.
    Idle,
    /// Throttled by the adaptive policy.
    Parked,
}

/// Private state of one collector between steps.
#[derive(Debug, Default)]
pub struct GcWorkerState {
    /// Collection in progress; its bank's GC claim is held.
    active: Option<Collection>,
    /// Bank whose claim is kept until the next step so that writers keep
    /// avoiding it while the final erase runs.
    finished: Option<u32>,
}

impl GcWorkerState {
    pub fn is_collecting(&self) -> bool {
        self.active.is_some()
    }
}

impl Ftl {
    /// One step of background collector `worker` at `now`. A round collects
    /// one victim block over several steps; throttling is only consulted
    /// between rounds.
    pub fn gc_worker_step(&self, worker: usize, st: &mut GcWorkerState, now: SimTime) -> Result<GcStep> {
        if let Some(b) = st.finished.take() {
            self.state.bank(b).release_gc();
        }
        if let Some(mut c) = st.active.take() {
            return match self.collect_step(&mut c, now) {
                Ok((until, erased)) => {
                    if erased {
                        st.finished = Some(c.bank);
                    } else {
                        st.active = Some(c);
                    }
                    Ok(GcStep::Worked { until })
                }
                Err(Error::GcNoRoom { bank, .. }) => {
                    self.state.bank(bank).release_gc();
                    Ok(GcStep::Idle)
                }
                Err(e) => {
                    self.state.bank(c.bank).release_gc();
                    Err(e)
                }
            };
        }
        let permitted = if self.cfg.gc.policy == GcPolicy::Adaptive {
            if worker == 0 {
                self.master_tick(now)
            } else {
                self.gc.permitted()
            }
        } else {
            self.gc.max_threads()
        };
        if worker >= permitted {
            return Ok(GcStep::Parked);
        }
        let Some(mut c) = self.start_round(now) else {
            self.gcc.idle_polls.fetch_add(1, Ordering::Relaxed);
            return Ok(GcStep::Idle);
        };
        self.gcc.worker_rounds.fetch_add(1, Ordering::Relaxed);
        self.event(
            now,
            GcEventKind::RoundStart { worker: worker as u32, permitted: permitted as u32 },
            Some(c.bank),
            Some(c.victim),
        );
        match self.collect_step(&mut c, now) {
            Ok((until, erased)) => {
                if erased {
                    st.finished = Some(c.bank);
                } else {
                    st.active = Some(c);
                }
                Ok(GcStep::Worked { until })
            }
            Err(Error::GcNoRoom { bank, .. }) => {
                self.state.bank(bank).release_gc();
                Ok(GcStep::Idle)
            }
            Err(e) => {
                self.state.bank(c.bank).release_gc();
                Err(e)
            }
        }
    }

    /// Releases any bank a collector still holds, e.g. at shutdown.
    pub fn gc_worker_release(&self, st: &mut GcWorkerState) {
        if let Some(b) = st.finished.take() {
            self.state.bank(b).release_gc();
        }
        if let Some(c) = st.active.take() {
            self.state.bank(c.bank).release_gc();
        }
    }

    /// Claims a bank that breaches a GC level and picks its victim. Banks
    /// flagged exclusive come first, then banks the device is not busy
    /// with, then banks with fewer free blocks.
    fn start_round(&self, now: SimTime) -> Option<Collection> {
        let levels = &self.cfg.levels;
        let n = self.geometry().num_banks();
        let mut cands: Vec<(bool, bool, u32, u32)> = (0..n)
            .filter_map(|b| {
                let info = self.state.bank(b);
                let free = info.free_blocks();
                (!info.gc_active() && levels.current_level(free).is_some()).then(|| {
                    (!info.exclusive(), !self.dev.bank_idle_at(b, now), free, b)
                })
            })
            .collect();
        cands.sort_unstable();
        for (_, _, _, bank) in cands {
            let info = self.state.bank(bank);
            if !info.try_claim_gc() {
                continue;
            }
            let free = info.free_blocks();
            let picked = levels.current_level(free).and_then(|l| {
                let limit = levels.levels[l].valid_pages;
                self.select_victim(bank, limit).map(|v| (v, l))
            });
            let Some((victim, level)) = picked else {
                info.release_gc();
                continue;
            };
            match self.begin_collection(bank, victim) {
                Ok(c) => {
                    self.event(
                        now,
                        GcEventKind::VictimSelected {
                            valid: self.state.blocks.block_valid(bank, victim),
                            level: level as u32,
                        },
                        Some(bank),
                        Some(victim),
                    );
                    return Some(c);
                }
                Err(_) => info.release_gc(),
            }
        }
        None
    }

    /// Master decision of the adaptive policy: maps the number of busy IO
    /// workers to a collector budget and maintains the exclusive bank.
    pub fn master_tick(&self, now: SimTime) -> usize {
        let active = self.io_active();
        let max = self.gc.max_threads();
        let permitted = self.cfg.adaptive.permitted(active, max);
        if self.gc.set_permitted(permitted) != permitted {
            self.event(
                now,
                GcEventKind::ThrottleChange { active_io: active as u32, permitted: permitted as u32 },
                None,
                None,
            );
        }
        let panic = self.cfg.levels.panic_threshold();
        let mut cur = self.gc.exclusive_bank();
        if let Some(b) = cur {
            if self.state.bank(b).free_blocks() >= panic + self.cfg.gc.exclusive_hysteresis {
                self.state.bank(b).set_exclusive(false);
                self.gc.set_exclusive_bank(None);
                self.event(now, GcEventKind::ExclusiveClear, Some(b), None);
                cur = None;
            }
        }
        if cur.is_none() {
            let worst = (0..self.geometry().num_banks())
                .map(|b| (self.state.bank(b).free_blocks(), b))
                .filter(|&(f, _)| f < panic)
                .min();
            if let Some((_, b)) = worst {
                self.state.bank(b).set_exclusive(true);
                self.gc.set_exclusive_bank(Some(b));
                self.gcc.exclusive_sets.fetch_add(1, Ordering::Relaxed);
                self.event(now, GcEventKind::ExclusiveSet, Some(b), None);
            }
        }
        permitted
    }
}
