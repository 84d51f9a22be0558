//! The shared FTL core. Both schedulers drive the same [`Ftl`]: every entry
//! point takes the caller's simulated time and returns when its flash work
//! completes.

use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ResolvedConfig;
use crate::error::{Error, Result};
use crate::ftl_state::FtlState;
use crate::gc::{GcController, GcEventLog};
use crate::io_engine::BufferPool;
use crate::sim_flash::{FlashGeometry, Lpn, SimFlashDevice};
use crate::stats::{EngineStats, GcCounters, IoCounters};

pub struct Ftl {
    pub(crate) dev: Arc<SimFlashDevice>,
    pub state: FtlState,
    pub(crate) pool: BufferPool,
    pub(crate) cfg: ResolvedConfig,
    pub(crate) io: IoCounters,
    pub(crate) gcc: GcCounters,
    pub(crate) gc: GcController,
    pub(crate) events: Option<GcEventLog>,
    pub(crate) rng: Mutex<ChaCha8Rng>,
    pub(crate) cursor: AtomicU32,
    /// IO workers currently holding or executing requests.
    pub(crate) io_active: AtomicUsize,
    /// Blocks of the last checkpoint chain this engine wrote.
    pub(crate) last_chain: Mutex<Vec<(u32, u32)>>,
    sector_size: u32,
    spp: u32,
}

impl Ftl {
    /// Fresh tables over `dev`. Nothing on the card is read.
    pub fn new(dev: Arc<SimFlashDevice>, cfg: ResolvedConfig) -> Self {
        let g = dev.geometry().clone();
        let state = FtlState::new(g.clone(), cfg.num_lpns, cfg.io.num_buffers, &dev.bad_blocks());
        Ftl {
            pool: BufferPool::new(cfg.io.num_buffers, g.page_size, g.read_unit),
            gc: GcController::new(cfg.gc.max_gc_threads),
            events: cfg.gc.event_log.then(GcEventLog::default),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f7a1)),
            cursor: AtomicU32::new(0),
            io_active: AtomicUsize::new(0),
            last_chain: Mutex::new(Vec::new()),
            io: IoCounters::default(),
            gcc: GcCounters::default(),
            sector_size: g.read_unit,
            spp: g.sectors_per_page(),
            state,
            cfg,
            dev,
        }
    }

    pub fn device(&self) -> &Arc<SimFlashDevice> {
        &self.dev
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.state.geometry
    }

    pub fn config(&self) -> &ResolvedConfig {
        &self.cfg
    }

    pub fn sector_size(&self) -> u32 {
        self.sector_size
    }

    pub fn sectors_per_page(&self) -> u32 {
        self.spp
    }

    /// Sectors exported to the host.
    pub fn num_sectors(&self) -> u64 {
        self.state.num_lpns() as u64 * self.spp as u64
    }

    pub fn split_lsn(&self, lsn: u64) -> Result<(Lpn, u32)> {
        if lsn >= self.num_sectors() {
            return Err(Error::OutOfRange(lsn));
        }
        Ok((Lpn((lsn / self.spp as u64) as u32), (lsn % self.spp as u64) as u32))
    }

    pub fn set_io_active(&self, n: usize) {
        self.io_active.store(n, Ordering::Relaxed);
    }

    pub fn io_active(&self) -> usize {
        self.io_active.load(Ordering::Relaxed)
    }

    pub fn stats(&self) -> EngineStats {
        let io = self.io.snapshot();
        let gc = self.gcc.snapshot();
        EngineStats {
            write_amplification: EngineStats::compute_wa(&io, &gc, self.spp),
            valid_pages: self.state.blocks.total_valid(),
            free_blocks: self.state.blocks.total_free(),
            device: self.dev.stats(),
            io,
            gc,
        }
    }

    /// Zeroes engine and card counters, e.g. after aging a card.
    pub fn reset_counters(&self) {
        self.io.reset();
        self.gcc.reset();
        self.dev.reset_counters();
        if let Some(ev) = &self.events {
            ev.clear();
        }
    }

    /// Full consistency audit; requires quiescence.
    pub fn audit(&self) -> std::result::Result<(), String> {
        self.state.audit(&self.dev)?;
        self.pool.queue_audit()?;
        for i in 0..self.pool.len() {
            let inner = self.pool.lock(i);
            if inner.lpn != self.state.lookup.get(i) {
                return Err(format!("buffer {i} holds {:?} but lookup says {:?}", inner.lpn, self.state.lookup.get(i)));
            }
        }
        if self.state.claims.any_claimed() {
            return Err("allocation claim left behind".into());
        }
        Ok(())
    }

    pub fn gc_events(&self) -> Vec<crate::gc::GcEvent> {
        self.events.as_ref().map(|e| e.snapshot()).unwrap_or_default()
    }

    /// Logical pages with dirty sectors still in buffers, with their masks.
    pub fn buffered_pages(&self) -> Vec<(Lpn, u64)> {
        (0..self.pool.len())
            .filter_map(|i| {
                let inner = self.pool.lock(i);
                inner.lpn.map(|l| (l, inner.dirty))
            })
            .collect()
    }
}
