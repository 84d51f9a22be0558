use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam::channel::{unbounded, Receiver, Sender};

use crate::error::{DeviceError, Error, Result};
use crate::ftl::Ftl;
use crate::gc::{GcStep, GcWorkerState};
use crate::io_engine::{dispatch, Completion, IoKind, IoRequest, RequestId};
use crate::time::SimTime;

use super::{Client, ClientAction, RunSummary};

struct Job {
    req: IoRequest,
    reply: Sender<Completion>,
}

struct Shared {
    /// Latest simulated time any IO worker or client has reached. Background
    /// actors never run ahead of it.
    frontier: AtomicU64,
    stop: AtomicBool,
    inflight: Vec<AtomicUsize>,
    busy: AtomicUsize,
    next_id: AtomicU64,
    submitted: AtomicU64,
}

impl Shared {
    fn advance(&self, t: SimTime) {
        self.frontier.fetch_max(t.0, Ordering::AcqRel);
    }

    fn frontier(&self) -> SimTime {
        SimTime(self.frontier.load(Ordering::Acquire))
    }
}

/// IO workers, collectors and the flush daemon on OS threads. Each actor
/// keeps its own simulated clock; requests start no earlier than their
/// submission time and the worker's previous completion.
pub struct ThreadedRuntime {
    ftl: Arc<Ftl>,
    shared: Arc<Shared>,
    senders: Vec<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
    background: Vec<JoinHandle<()>>,
}

const BACKGROUND_WAIT: Duration = Duration::from_micros(200);

impl ThreadedRuntime {
    pub fn start(ftl: Arc<Ftl>, start: SimTime) -> Self {
        let cfg = ftl.config().clone();
        let q = cfg.io.num_queues;
        let shared = Arc::new(Shared {
            frontier: AtomicU64::new(start.0),
            stop: AtomicBool::new(false),
            inflight: (0..q).map(|_| AtomicUsize::new(0)).collect(),
            busy: AtomicUsize::new(0),
            next_id: AtomicU64::new(0),
            submitted: AtomicU64::new(0),
        });
        let mut senders = Vec::with_capacity(q);
        let mut workers = Vec::with_capacity(q);
        for w in 0..q {
            let (tx, rx) = unbounded::<Job>();
            senders.push(tx);
            let (ftl, shared) = (ftl.clone(), shared.clone());
            workers.push(
                std::thread::Builder::new()
                    .name(format!("ftl-io-{w}"))
                    .spawn(move || io_worker(w, ftl, shared, rx, start))
                    .expect("spawn IO worker"),
            );
        }
        let mut background = Vec::new();
        if cfg.gc.policy.uses_workers() {
            for i in 0..cfg.gc.max_gc_threads {
                let (ftl, shared) = (ftl.clone(), shared.clone());
                background.push(
                    std::thread::Builder::new()
                        .name(format!("ftl-gc-{i}"))
                        .spawn(move || gc_worker(i, ftl, shared, start))
                        .expect("spawn GC worker"),
                );
            }
        }
        {
            let (ftl, shared) = (ftl.clone(), shared.clone());
            background.push(
                std::thread::Builder::new()
                    .name("ftl-flushd".into())
                    .spawn(move || flush_daemon(ftl, shared, start))
                    .expect("spawn flush daemon"),
            );
        }
        ThreadedRuntime { ftl, shared, senders, workers, background }
    }

    pub fn ftl(&self) -> &Arc<Ftl> {
        &self.ftl
    }

    /// Latest simulated time reached by the host side.
    pub fn now(&self) -> SimTime {
        self.shared.frontier()
    }

    /// Queues a request submitted at `at`; its completion arrives on `reply`.
    pub fn submit(&self, kind: IoKind, client: usize, at: SimTime, reply: Sender<Completion>) -> Result<RequestId> {
        if self.shared.stop.load(Ordering::Acquire) {
            return Err(Error::Shutdown);
        }
        let cfg = self.ftl.config();
        let seq = self.shared.submitted.fetch_add(1, Ordering::Relaxed);
        let q = dispatch(&kind, cfg.io.dispatch, cfg.io.num_queues, self.ftl.sectors_per_page(), seq);
        let id = self.shared.next_id.fetch_add(1, Ordering::Relaxed);
        if self.shared.inflight[q].fetch_add(1, Ordering::AcqRel) == 0 {
            let busy = self.shared.busy.fetch_add(1, Ordering::AcqRel) + 1;
            self.ftl.set_io_active(busy);
        }
        self.shared.advance(at);
        let job = Job { req: IoRequest { id, client, kind, submitted: at }, reply };
        self.senders[q].send(job).map_err(|_| Error::Shutdown)?;
        Ok(id)
    }

    /// Runs a batch from one submitter and returns the completions in
    /// submission order.
    pub fn execute(&self, batch: Vec<IoKind>, at: SimTime) -> Result<Vec<Completion>> {
        let (tx, rx) = unbounded();
        let n = batch.len();
        for kind in batch {
            self.submit(kind, 0, at, tx.clone())?;
        }
        let mut done: Vec<Completion> = (0..n).map(|_| rx.recv().map_err(|_| Error::Shutdown)).collect::<Result<_>>()?;
        done.sort_by_key(|c| c.id);
        Ok(done)
    }

    /// Runs every client on its own thread until all are done.
    pub fn run(&self, clients: &mut [&mut dyn Client], start: SimTime) -> Result<RunSummary> {
        let results: Vec<Result<(SimTime, u64)>> = std::thread::scope(|s| {
            let handles: Vec<_> = clients
                .iter_mut()
                .enumerate()
                .map(|(i, c)| {
                    let client: &mut dyn Client = &mut **c;
                    s.spawn(move || self.drive(i, client, start))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect()
        });
        let mut summary = RunSummary { started: start, finished: start, completions: 0 };
        for r in results {
            let (end, n) = r?;
            summary.finished = summary.finished.max(end);
            summary.completions += n;
        }
        Ok(summary)
    }

    fn drive(&self, i: usize, client: &mut dyn Client, start: SimTime) -> Result<(SimTime, u64)> {
        let (tx, rx) = unbounded();
        let mut now = start;
        let mut completions = 0;
        loop {
            match client.next(now) {
                ClientAction::Submit(batch) => {
                    let n = batch.len();
                    for kind in batch {
                        self.submit(kind, i, now, tx.clone())?;
                    }
                    for _ in 0..n {
                        let c = rx.recv().map_err(|_| Error::Shutdown)?;
                        now = now.max(c.completed);
                        client.complete(&c);
                        completions += 1;
                    }
                }
                ClientAction::Sleep(ns) => {
                    now += ns;
                    self.shared.advance(now);
                }
                ClientAction::Done => return Ok((now, completions)),
            }
        }
    }

    /// Lets background actors run with no host load for `ns`.
    pub fn advance_idle(&self, ns: u64) {
        self.shared.advance(self.shared.frontier() + ns);
    }

    /// Stops background actors, drains the queues and joins every thread.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        self.senders.clear();
        for h in self.workers.drain(..).chain(self.background.drain(..)) {
            let _ = h.join();
        }
    }
}

impl Drop for ThreadedRuntime {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn io_worker(q: usize, ftl: Arc<Ftl>, shared: Arc<Shared>, rx: Receiver<Job>, start: SimTime) {
    let mut clock = start;
    while let Ok(Job { req, reply }) = rx.recv() {
        let now = clock.max(req.submitted);
        let (result, t) = ftl.execute(&req.kind, now);
        clock = t;
        shared.advance(t);
        if shared.inflight[q].fetch_sub(1, Ordering::AcqRel) == 1 {
            let busy = shared.busy.fetch_sub(1, Ordering::AcqRel) - 1;
            ftl.set_io_active(busy);
        }
        let _ = reply.send(Completion { id: req.id, client: req.client, submitted: req.submitted, completed: t, result });
    }
}

fn gc_worker(i: usize, ftl: Arc<Ftl>, shared: Arc<Shared>, start: SimTime) {
    let idle = ftl.config().gc.idle_poll_us * 1000;
    let mut st = GcWorkerState::default();
    let mut clock = start;
    while !shared.stop.load(Ordering::Acquire) {
        if clock > shared.frontier() {
            std::thread::sleep(BACKGROUND_WAIT);
            continue;
        }
        match ftl.gc_worker_step(i, &mut st, clock) {
            Ok(GcStep::Worked { until }) => clock = until.max(clock + 1),
            Ok(GcStep::Idle | GcStep::Parked) => clock += idle,
            Err(Error::Device(DeviceError::Halted)) => break,
            Err(e) => {
                log::error!("collector {i} stopped: {e}");
                break;
            }
        }
    }
    ftl.gc_worker_release(&mut st);
}

fn flush_daemon(ftl: Arc<Ftl>, shared: Arc<Shared>, start: SimTime) {
    let period = ftl.config().io.daemon_period_ms * 1_000_000;
    let mut next = start + period;
    while !shared.stop.load(Ordering::Acquire) {
        if next > shared.frontier() {
            std::thread::sleep(BACKGROUND_WAIT);
            continue;
        }
        let t = ftl.daemon_tick(next);
        next = t.max(next + period);
    }
}
