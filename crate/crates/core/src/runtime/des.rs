use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DeviceError, Error, Result};
use crate::ftl::Ftl;
use crate::gc::{GcStep, GcWorkerState};
use crate::io_engine::{dispatch, Completion, IoKind, IoRequest, RequestId};
use crate::time::SimTime;

use super::{Client, ClientAction, OneShot, RunSummary};

#[derive(Debug)]
enum Event {
    Client(usize),
    Worker(usize),
    Deliver(Completion),
    Gc(usize),
    Daemon,
}

impl Event {
    /// Whether the event belongs to a client run; background events alone
    /// do not keep a run going.
    fn is_live(&self) -> bool {
        matches!(self, Event::Client(_) | Event::Worker(_) | Event::Deliver(_))
    }
}

/// Seeded discrete-event scheduler. One IO worker per submission queue, the
/// background collectors of the GC policy and the idle-flush daemon step in
/// simulated-time order; ties are broken by the seeded generator.
pub struct Simulation {
    ftl: Arc<Ftl>,
    now: SimTime,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Reverse<(SimTime, u64, u64)>>,
    events: HashMap<u64, Event>,
    next_seq: u64,
    live: usize,
    queues: Vec<VecDeque<IoRequest>>,
    worker_clock: Vec<SimTime>,
    worker_scheduled: Vec<bool>,
    gc: Vec<GcWorkerState>,
    next_request: RequestId,
    submitted: u64,
    pending: Vec<usize>,
    client_done: Vec<Option<SimTime>>,
    stopped: bool,
}

impl Simulation {
    pub fn new(ftl: Arc<Ftl>, start: SimTime) -> Self {
        let cfg = ftl.config();
        let q = cfg.io.num_queues;
        let gc_workers = if cfg.gc.policy.uses_workers() { cfg.gc.max_gc_threads } else { 0 };
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            now: start,
            heap: BinaryHeap::new(),
            events: HashMap::new(),
            next_seq: 0,
            live: 0,
            queues: vec![VecDeque::new(); q],
            worker_clock: vec![start; q],
            worker_scheduled: vec![false; q],
            gc: (0..gc_workers).map(|_| GcWorkerState::default()).collect(),
            next_request: 0,
            submitted: 0,
            pending: Vec::new(),
            client_done: Vec::new(),
            stopped: false,
            ftl,
        };
        for i in 0..gc_workers {
            sim.schedule(start, Event::Gc(i));
        }
        let period = sim.daemon_period();
        sim.schedule(start + period, Event::Daemon);
        sim
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn ftl(&self) -> &Arc<Ftl> {
        &self.ftl
    }

    fn daemon_period(&self) -> u64 {
        self.ftl.config().io.daemon_period_ms * 1_000_000
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        if ev.is_live() {
            self.live += 1;
        }
        let tie = self.rng.gen::<u64>();
        self.heap.push(Reverse((at, tie, seq)));
        self.events.insert(seq, ev);
    }

    fn pop(&mut self) -> Option<(SimTime, Event)> {
        let Reverse((at, _, seq)) = self.heap.pop()?;
        let ev = self.events.remove(&seq).expect("scheduled event");
        if ev.is_live() {
            self.live -= 1;
        }
        Some((at, ev))
    }

    fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse((at, _, _))| *at)
    }

    /// Runs clients until every one of them is done. Background actors keep
    /// stepping in between; their pending steps carry over to the next call.
    pub fn run(&mut self, clients: &mut [&mut dyn Client]) -> Result<RunSummary> {
        if self.stopped {
            return Err(Error::Shutdown);
        }
        let started = self.now;
        self.pending = vec![0; clients.len()];
        self.client_done = vec![None; clients.len()];
        for i in 0..clients.len() {
            self.schedule(started, Event::Client(i));
        }
        let mut completions = 0;
        while self.live > 0 {
            let (at, ev) = self.pop().expect("live events are queued");
            self.now = self.now.max(at);
            match ev {
                Event::Client(i) => self.client_step(i, &mut *clients[i]),
                Event::Worker(q) => self.worker_step(q),
                Event::Deliver(c) => {
                    let i = c.client;
                    clients[i].complete(&c);
                    completions += 1;
                    self.pending[i] -= 1;
                    if self.pending[i] == 0 {
                        self.schedule(self.now, Event::Client(i));
                    }
                }
                Event::Gc(i) => self.gc_step(i),
                Event::Daemon => self.daemon_step(),
            }
        }
        let finished = self.client_done.iter().flatten().copied().max().unwrap_or(started);
        Ok(RunSummary { started, finished, completions })
    }

    /// Runs one batch of requests from a single submitter and returns their
    /// completions in submission order.
    pub fn execute(&mut self, batch: Vec<IoKind>) -> Result<Vec<Completion>> {
        let mut one = OneShot::new(batch);
        self.run(&mut [&mut one])?;
        let mut done = one.done;
        done.sort_by_key(|c| c.id);
        Ok(done)
    }

    /// Lets background actors run with no host load until `now + ns`.
    pub fn advance_idle(&mut self, ns: u64) {
        let target = self.now + ns;
        while self.peek_time().is_some_and(|t| t <= target) {
            let (at, ev) = self.pop().expect("peeked");
            self.now = self.now.max(at);
            match ev {
                Event::Gc(i) => self.gc_step(i),
                Event::Daemon => self.daemon_step(),
                other => unreachable!("{other:?} outside a run"),
            }
        }
        self.now = target;
    }

    /// Moves the clock forward to `t` without running anything, e.g. after
    /// work done outside the scheduler.
    pub fn sync_clock(&mut self, t: SimTime) {
        self.now = self.now.max(t);
    }

    /// Stops the background actors and releases their banks.
    pub fn stop(&mut self) {
        for st in &mut self.gc {
            self.ftl.gc_worker_release(st);
        }
        self.heap.clear();
        self.events.clear();
        self.live = 0;
        self.stopped = true;
    }

    fn client_step(&mut self, i: usize, client: &mut dyn Client) {
        match client.next(self.now) {
            ClientAction::Submit(batch) if batch.is_empty() => self.schedule(self.now, Event::Client(i)),
            ClientAction::Submit(batch) => {
                let cfg = self.ftl.config();
                let (policy, nq) = (cfg.io.dispatch, cfg.io.num_queues);
                let spp = self.ftl.sectors_per_page();
                self.pending[i] = batch.len();
                for kind in batch {
                    let q = dispatch(&kind, policy, nq, spp, self.submitted);
                    self.submitted += 1;
                    let id = self.next_request;
                    self.next_request += 1;
                    self.queues[q].push_back(IoRequest { id, client: i, kind, submitted: self.now });
                    if !self.worker_scheduled[q] {
                        self.worker_scheduled[q] = true;
                        let at = self.now.max(self.worker_clock[q]);
                        self.schedule(at, Event::Worker(q));
                    }
                }
            }
            ClientAction::Sleep(ns) => self.schedule(self.now + ns, Event::Client(i)),
            ClientAction::Done => self.client_done[i] = Some(self.now),
        }
    }

    fn busy_workers(&self, now: SimTime, current: Option<usize>) -> usize {
        (0..self.queues.len())
            .filter(|&q| Some(q) == current || self.worker_clock[q] > now || !self.queues[q].is_empty())
            .count()
    }

    fn worker_step(&mut self, q: usize) {
        let req = self.queues[q].pop_front().expect("worker scheduled with work");
        self.ftl.set_io_active(self.busy_workers(self.now, Some(q)));
        let (result, t) = self.ftl.execute(&req.kind, self.now);
        self.worker_clock[q] = t;
        let c = Completion { id: req.id, client: req.client, submitted: req.submitted, completed: t, result };
        self.schedule(t, Event::Deliver(c));
        if self.queues[q].is_empty() {
            self.worker_scheduled[q] = false;
        } else {
            self.schedule(t, Event::Worker(q));
        }
    }

    fn gc_step(&mut self, i: usize) {
        self.ftl.set_io_active(self.busy_workers(self.now, None));
        let idle = self.ftl.config().gc.idle_poll_us * 1000;
        match self.ftl.gc_worker_step(i, &mut self.gc[i], self.now) {
            Ok(GcStep::Worked { until }) => self.schedule(until.max(self.now + 1), Event::Gc(i)),
            Ok(GcStep::Idle | GcStep::Parked) => self.schedule(self.now + idle, Event::Gc(i)),
            Err(Error::Device(DeviceError::Halted)) => self.ftl.gc_worker_release(&mut self.gc[i]),
            Err(e) => {
                log::error!("collector {i} stopped: {e}");
                self.ftl.gc_worker_release(&mut self.gc[i]);
            }
        }
    }

    fn daemon_step(&mut self) {
        let t = self.ftl.daemon_tick(self.now);
        let next = t.max(self.now + self.daemon_period());
        self.schedule(next, Event::Daemon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Dispatch;
    use crate::ftl::testing::{ftl_with, geometry, sector};
    use crate::gc::GcPolicy;

    /// Writes `n` sectors in pairs from a private stripe, with a think time
    /// between pairs.
    struct Writer {
        base: u64,
        left: u64,
        seen: Vec<(RequestId, SimTime)>,
    }

    impl Client for Writer {
        fn next(&mut self, _now: SimTime) -> ClientAction {
            if self.left == 0 {
                return ClientAction::Done;
            }
            if self.left % 2 == 1 {
                self.left -= 1;
                return ClientAction::Sleep(30_000);
            }
            self.left -= 1;
            let lsn = self.base + self.left;
            ClientAction::Submit(vec![
                IoKind::Write { lsn, data: sector(lsn, 1) },
                IoKind::Write { lsn: lsn + 64, data: sector(lsn + 64, 1) },
            ])
        }

        fn complete(&mut self, c: &Completion) {
            assert!(c.result.is_ok());
            self.seen.push((c.id, c.completed));
        }
    }

    fn sim(seed: u64) -> Simulation {
        let f = ftl_with(geometry(), |c| {
            c.seed = seed;
            c.io.num_queues = 4;
            c.io.idle_flush_seconds = 0.01;
            c.gc.policy = GcPolicy::Pllgc;
            c.gc.max_gc_threads = 2;
        });
        Simulation::new(Arc::new(f), SimTime::ZERO)
    }

    fn run_writers(seed: u64) -> (RunSummary, Vec<Vec<(RequestId, SimTime)>>) {
        let mut s = sim(seed);
        let mut w: Vec<Writer> = (0..3).map(|i| Writer { base: i * 200, left: 40, seen: vec![] }).collect();
        let mut clients: Vec<&mut dyn Client> = w.iter_mut().map(|c| c as &mut dyn Client).collect();
        let summary = s.run(&mut clients).unwrap();
        (summary, w.into_iter().map(|c| c.seen).collect())
    }

    #[test]
    fn same_seed_gives_the_same_run() {
        let (a, sa) = run_writers(9);
        let (b, sb) = run_writers(9);
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn every_request_completes_once() {
        let (summary, seen) = run_writers(3);
        // 3 clients, 20 submissions of 2 writes each
        assert_eq!(summary.completions, 120);
        let mut ids: Vec<RequestId> = seen.iter().flatten().map(|(id, _)| *id).collect();
        assert_eq!(ids.len(), 120);
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 120);
        assert!(summary.finished > summary.started);
    }

    #[test]
    fn one_page_meets_one_queue_in_order() {
        let mut s = sim(1);
        assert_eq!(s.ftl().config().io.dispatch, Dispatch::LpnMod);
        let batch = (0..6u8).map(|tag| IoKind::Write { lsn: 5, data: sector(5, tag) }).collect();
        s.execute(batch).unwrap();
        let done = s.execute(vec![IoKind::Read { lsn: 5 }]).unwrap();
        assert_eq!(done[0].result.as_ref().unwrap().as_deref(), Some(&sector(5, 5)[..]));
    }

    #[test]
    fn idle_time_lets_the_daemon_flush() {
        let mut s = sim(2);
        s.execute(vec![IoKind::Write { lsn: 0, data: sector(0, 1) }]).unwrap();
        let before = s.ftl().device().stats().pages_written;
        let idle = (s.ftl().config().io.idle_flush_seconds * 1e9) as u64;
        s.advance_idle(idle + 2 * s.daemon_period());
        assert!(s.ftl().device().stats().pages_written > before);
    }

    #[test]
    fn stopped_simulation_refuses_runs() {
        let mut s = sim(4);
        s.stop();
        assert!(matches!(s.execute(vec![IoKind::Barrier]), Err(Error::Shutdown)));
    }
}
