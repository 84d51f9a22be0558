//! Schedulers that drive an [`Ftl`](crate::Ftl) with IO workers, background
//! collectors and the idle-flush daemon.
//!
//! [`Simulation`] is a seeded discrete-event scheduler: every actor steps in
//! simulated-time order on one OS thread, so runs are reproducible.
//! [`ThreadedRuntime`] runs the same actors on OS threads, each keeping its
//! own simulated clock.

mod des;
mod threaded;

pub use des::Simulation;
pub use threaded::ThreadedRuntime;

use crate::io_engine::{Completion, IoKind};
use crate::time::SimTime;

/// What a client does next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientAction {
    /// Submits requests together; the client is called again once all of
    /// them complete.
    Submit(Vec<IoKind>),
    /// Think time, in nanoseconds.
    Sleep(u64),
    Done,
}

/// A closed-loop load generator.
pub trait Client: Send {
    fn next(&mut self, now: SimTime) -> ClientAction;
    fn complete(&mut self, completion: &Completion);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub started: SimTime,
    /// When the last client finished.
    pub finished: SimTime,
    pub completions: u64,
}

impl RunSummary {
    pub fn elapsed_ns(&self) -> u64 {
        self.finished.since(self.started)
    }
}

/// Submits one batch and records its completions, for synchronous calls.
pub(crate) struct OneShot {
    batch: Option<Vec<IoKind>>,
    pub(crate) done: Vec<Completion>,
}

impl OneShot {
    pub(crate) fn new(batch: Vec<IoKind>) -> Self {
        OneShot { batch: Some(batch), done: Vec::new() }
    }
}

impl Client for OneShot {
    fn next(&mut self, _now: SimTime) -> ClientAction {
        match self.batch.take() {
            Some(b) => ClientAction::Submit(b),
            None => ClientAction::Done,
        }
    }

    fn complete(&mut self, c: &Completion) {
        self.done.push(c.clone());
    }
}
