//! Engine lifecycle: start on a card (load a checkpoint or scan), serve
//! block-device requests, shut down cleanly or by simulated crash.

use std::collections::HashMap;
use std::sync::Arc;

use crossbeam::channel::{unbounded, Receiver, Sender};
use parking_lot::{Mutex, RwLock};

use crate::checkpoint::{LoadOutcome, LoadReport, SaveReport, ScanReport};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::ftl::Ftl;
use crate::io_engine::{Completion, IoKind, RequestId};
use crate::runtime::{Client, RunSummary, Simulation, ThreadedRuntime};
use crate::sim_flash::SimFlashDevice;
use crate::stats::EngineStats;
use crate::time::SimTime;

/// How the tables were rebuilt at start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartPath {
    Checkpoint(LoadReport),
    /// No usable checkpoint; every written page was scanned. A fresh card
    /// takes this path with nothing mapped.
    Recovery(ScanReport),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartReport {
    pub path: StartPath,
    /// Device page-read operations spent on start, probes included.
    pub page_reads: u64,
    /// Simulated time at which the engine began serving.
    pub ready_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShutdownReport {
    pub checkpoint: Option<SaveReport>,
    pub at: SimTime,
}

enum Runtime {
    Sim(Mutex<Simulation>),
    Threads(ThreadedRuntime),
}

/// Requests submitted with [`Engine::submit`] and not yet waited for.
#[derive(Default)]
struct Outstanding {
    /// Deterministic mode: requests run together at the next wait.
    queued: Vec<(RequestId, IoKind)>,
    next_ticket: RequestId,
    done: HashMap<RequestId, Completion>,
}

/// A running engine. Every operation is safe from any thread; after
/// [`Engine::shutdown`] they all fail with [`Error::Shutdown`].
pub struct Engine {
    ftl: Arc<Ftl>,
    rt: RwLock<Option<Runtime>>,
    start: StartReport,
    outstanding: Mutex<Outstanding>,
    reply: (Sender<Completion>, Receiver<Completion>),
}

impl Engine {
    /// Opens `dev`: loads the newest checkpoint, or rebuilds the tables
    /// with a recovery scan when there is none, then launches the workers.
    pub fn start(config: &EngineConfig, dev: Arc<SimFlashDevice>) -> Result<Engine> {
        let resolved = config.resolve(dev.geometry())?;
        dev.reset_clocks();
        let ftl = Arc::new(Ftl::new(dev.clone(), resolved));
        let reads_before = dev.stats().page_reads;
        let path = match ftl.checkpoint_load(SimTime::ZERO)? {
            LoadOutcome::Loaded(r) => StartPath::Checkpoint(r),
            LoadOutcome::NotFound => StartPath::Recovery(ftl.recovery_scan(SimTime::ZERO)?),
        };
        ftl.audit().map_err(|e| Error::Image(format!("tables rebuilt at start are inconsistent: {e}")))?;
        let ready_at = match &path {
            StartPath::Checkpoint(r) => r.done,
            StartPath::Recovery(r) => r.done,
        };
        let start = StartReport { path, page_reads: dev.stats().page_reads - reads_before, ready_at };
        let rt = if config.deterministic {
            Runtime::Sim(Mutex::new(Simulation::new(ftl.clone(), ready_at)))
        } else {
            Runtime::Threads(ThreadedRuntime::start(ftl.clone(), ready_at))
        };
        Ok(Engine {
            ftl,
            rt: RwLock::new(Some(rt)),
            start,
            outstanding: Mutex::new(Outstanding::default()),
            reply: unbounded(),
        })
    }

    pub fn start_report(&self) -> &StartReport {
        &self.start
    }

    /// The core, for tools that need direct access (aging, inspection).
    pub fn ftl(&self) -> &Arc<Ftl> {
        &self.ftl
    }

    pub fn device(&self) -> &Arc<SimFlashDevice> {
        self.ftl.device()
    }

    pub fn is_running(&self) -> bool {
        self.rt.read().is_some()
    }

    fn with_rt<T>(&self, f: impl FnOnce(&Runtime) -> Result<T>) -> Result<T> {
        match &*self.rt.read() {
            Some(rt) => f(rt),
            None => Err(Error::Shutdown),
        }
    }

    /// Current host-side simulated time.
    pub fn now(&self) -> Result<SimTime> {
        self.with_rt(|rt| {
            Ok(match rt {
                Runtime::Sim(s) => s.lock().now(),
                Runtime::Threads(t) => t.now(),
            })
        })
    }

    /// Runs a batch of requests from one submitter and waits for all of
    /// them. Completions come back in submission order.
    pub fn execute(&self, batch: Vec<IoKind>) -> Result<Vec<Completion>> {
        self.with_rt(|rt| match rt {
            Runtime::Sim(s) => s.lock().execute(batch),
            Runtime::Threads(t) => t.execute(batch, t.now()),
        })
    }

    /// Queues a request without waiting for it.
    pub fn submit(&self, kind: IoKind) -> Result<RequestId> {
        self.with_rt(|rt| match rt {
            Runtime::Sim(_) => {
                let mut o = self.outstanding.lock();
                let ticket = o.next_ticket;
                o.next_ticket += 1;
                o.queued.push((ticket, kind));
                Ok(ticket)
            }
            Runtime::Threads(t) => t.submit(kind, 0, t.now(), self.reply.0.clone()),
        })
    }

    /// Waits for a request returned by [`Engine::submit`].
    pub fn wait(&self, id: RequestId) -> Result<Completion> {
        self.with_rt(|rt| match rt {
            Runtime::Sim(s) => {
                let mut o = self.outstanding.lock();
                if let Some(c) = o.done.remove(&id) {
                    return Ok(c);
                }
                let queued = std::mem::take(&mut o.queued);
                let (tickets, kinds): (Vec<_>, Vec<_>) = queued.into_iter().unzip();
                let done = s.lock().execute(kinds)?;
                for (ticket, mut c) in tickets.into_iter().zip(done) {
                    c.id = ticket;
                    o.done.insert(ticket, c);
                }
                o.done.remove(&id).ok_or_else(|| Error::Io(format!("unknown request {id}")))
            }
            Runtime::Threads(_) => loop {
                if let Some(c) = self.outstanding.lock().done.remove(&id) {
                    return Ok(c);
                }
                let c = self.reply.1.recv().map_err(|_| Error::Shutdown)?;
                if c.id == id {
                    return Ok(c);
                }
                self.outstanding.lock().done.insert(c.id, c);
            },
        })
    }

    fn check_aligned(&self, lsn: u64, len: usize) -> Result<usize> {
        let ss = self.ftl.sector_size() as usize;
        if len == 0 || len % ss != 0 {
            return Err(Error::Io(format!("length {len} is not a positive multiple of {ss}-byte sectors")));
        }
        let n = len / ss;
        if lsn + n as u64 > self.ftl.num_sectors() {
            return Err(Error::OutOfRange(lsn + n as u64 - 1));
        }
        Ok(n)
    }

    /// Writes whole sectors starting at `lsn`. Returns once they are
    /// buffered, not necessarily on flash.
    pub fn write(&self, lsn: u64, data: &[u8]) -> Result<()> {
        self.check_aligned(lsn, data.len())?;
        let ss = self.ftl.sector_size() as usize;
        let batch = data
            .chunks(ss)
            .enumerate()
            .map(|(i, d)| IoKind::Write { lsn: lsn + i as u64, data: d.to_vec() })
            .collect();
        for c in self.execute(batch)? {
            c.result?;
        }
        Ok(())
    }

    /// Reads `sectors` sectors starting at `lsn`.
    pub fn read(&self, lsn: u64, sectors: usize) -> Result<Vec<u8>> {
        self.check_aligned(lsn, sectors * self.ftl.sector_size() as usize)?;
        let batch = (0..sectors as u64).map(|i| IoKind::Read { lsn: lsn + i }).collect();
        let mut out = Vec::with_capacity(sectors * self.ftl.sector_size() as usize);
        for c in self.execute(batch)? {
            out.extend(c.result?.unwrap_or_default());
        }
        Ok(out)
    }

    /// Persists every buffered page.
    pub fn flush(&self) -> Result<()> {
        self.execute(vec![IoKind::Barrier])?.remove(0).result.map(|_| ())
    }

    /// Persists one logical page if it is buffered.
    pub fn sync_page(&self, lpn: u32) -> Result<()> {
        self.execute(vec![IoKind::SyncPage { lpn }])?.remove(0).result.map(|_| ())
    }

    /// Drives closed-loop clients until all of them are done.
    pub fn run_clients(&self, clients: &mut [&mut dyn Client]) -> Result<RunSummary> {
        self.with_rt(|rt| match rt {
            Runtime::Sim(s) => s.lock().run(clients),
            Runtime::Threads(t) => t.run(clients, t.now()),
        })
    }

    /// Lets background work proceed with no host load for `ns` simulated
    /// nanoseconds. In threaded mode this only moves the clock the
    /// background threads may reach; it does not wait for them.
    pub fn advance_idle(&self, ns: u64) -> Result<()> {
        self.with_rt(|rt| {
            match rt {
                Runtime::Sim(s) => s.lock().advance_idle(ns),
                Runtime::Threads(t) => t.advance_idle(ns),
            }
            Ok(())
        })
    }

    /// Collects every block with at most `max_valid` valid pages. The
    /// engine must have no requests in flight.
    pub fn force_gc(&self, max_valid: u32) -> Result<SimTime> {
        self.with_rt(|rt| match rt {
            Runtime::Sim(s) => {
                let mut s = s.lock();
                let t = self.ftl.force_gc(max_valid, s.now())?;
                s.sync_clock(t);
                Ok(t)
            }
            Runtime::Threads(t) => self.ftl.force_gc(max_valid, t.now()),
        })
    }

    pub fn stats(&self) -> Result<EngineStats> {
        self.with_rt(|_| Ok(self.ftl.stats()))
    }

    /// Consistency audit of the tables, buffers and card. Requires that no
    /// requests are in flight.
    pub fn audit(&self) -> Result<()> {
        self.with_rt(|_| self.ftl.audit().map_err(Error::Audit))
    }

    /// Stops the engine. A clean shutdown flushes every buffer and, unless
    /// disabled, writes a checkpoint; a dirty one drops buffered data as a
    /// crash would. Fails with [`Error::Shutdown`] if already stopped.
    pub fn shutdown(&self, clean: bool) -> Result<ShutdownReport> {
        let rt = self.rt.write().take().ok_or(Error::Shutdown)?;
        let at = match rt {
            Runtime::Sim(s) => {
                let mut s = s.into_inner();
                s.stop();
                s.now()
            }
            Runtime::Threads(t) => {
                let at = t.now();
                t.shutdown();
                at
            }
        };
        if !clean {
            return Ok(ShutdownReport { checkpoint: None, at });
        }
        let at = self.ftl.flush_all(at)?;
        if !self.ftl.config().checkpoint.save_on_shutdown {
            return Ok(ShutdownReport { checkpoint: None, at });
        }
        let save = self.ftl.checkpoint_save(at)?;
        Ok(ShutdownReport { at: save.done, checkpoint: Some(save) })
    }
}
