use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use parftl::io_engine::{Completion, IoKind};
use parftl::runtime::{Client, ClientAction};
use parftl::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    Sequential,
    Random,
    /// The thread's region written front to back this many times.
    Overwrite(u32),
}

/// Sleep `ns` after every `every_bytes` written by a thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkRule {
    pub every_bytes: u64,
    pub ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub num_client_threads: usize,
    /// Size of each thread's region; threads write disjoint regions.
    pub bytes_per_thread: u64,
    /// Bytes of one logical write, the unit of a latency sample.
    pub io_size: u64,
    pub pattern: Pattern,
    /// Persist the pages written so far after this many bytes.
    pub sync_every: Option<u64>,
    #[serde(default)]
    pub think: Vec<ThinkRule>,
    /// First logical page of thread 0's region.
    #[serde(default)]
    pub base_lpn: u64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self, page_size: u32) -> Result<(), String> {
        if self.io_size == 0 || self.io_size % page_size as u64 != 0 {
            return Err(format!("io_size must be a positive multiple of the {page_size}-byte page"));
        }
        if self.bytes_per_thread % self.io_size != 0 {
            return Err("bytes_per_thread must be a multiple of io_size".into());
        }
        if self.think.iter().any(|r| r.every_bytes == 0) {
            return Err("think rules need a positive byte interval".into());
        }
        Ok(())
    }

    fn units_per_thread(&self) -> u64 {
        self.bytes_per_thread / self.io_size
    }

    /// Logical writes the whole workload issues.
    pub fn total_units(&self) -> u64 {
        let passes = match self.pattern {
            Pattern::Overwrite(n) => n as u64,
            _ => 1,
        };
        self.units_per_thread() * passes * self.num_client_threads as u64
    }

    /// Logical pages touched, from `base_lpn`.
    pub fn footprint_pages(&self, page_size: u32) -> u64 {
        self.bytes_per_thread / page_size as u64 * self.num_client_threads as u64
    }
}

/// Latency of one logical write: from submission of its first sector until
/// its last sector, and the sync that follows it if any, completed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub request_id: u64,
    pub client: usize,
    pub bytes: u64,
    pub latency_us: f64,
    pub submitted_us: f64,
    pub ok: bool,
}

/// Deterministic content of sector `sector` of logical page `lpn` in pass
/// `pass`.
pub fn sector_pattern(lpn: u64, sector: u32, pass: u32, len: usize) -> Vec<u8> {
    let seed = (lpn.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((sector as u64) << 40) ^ pass as u64) as u32;
    (0..len).map(|i| (seed.wrapping_add(i as u32).wrapping_mul(2_654_435_761) >> 24) as u8).collect()
}

enum Phase {
    Idle,
    Writing { first_lpn: u64, started: SimTime, ok: bool },
    Syncing { started: SimTime, ok: bool },
}

/// One workload thread.
pub struct WorkloadClient {
    id: usize,
    spec: WorkloadSpec,
    spp: u32,
    sector_size: u32,
    page_size: u32,
    rng: ChaCha8Rng,
    next_unit: u64,
    total_units: u64,
    phase: Phase,
    since_sync: u64,
    unsynced: Vec<u64>,
    think_acc: Vec<u64>,
    next_sample: u64,
    pub samples: Vec<LatencySample>,
    pub bytes_acknowledged: u64,
    pub errors: u64,
}

impl WorkloadClient {
    pub fn new(id: usize, spec: &WorkloadSpec, page_size: u32, sector_size: u32) -> Self {
        let passes = match spec.pattern {
            Pattern::Overwrite(n) => n as u64,
            _ => 1,
        };
        WorkloadClient {
            id,
            spp: page_size / sector_size,
            sector_size,
            page_size,
            rng: ChaCha8Rng::seed_from_u64(spec.seed ^ (id as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)),
            next_unit: 0,
            total_units: spec.units_per_thread() * passes,
            phase: Phase::Idle,
            since_sync: 0,
            unsynced: Vec::new(),
            think_acc: vec![0; spec.think.len()],
            next_sample: 0,
            samples: Vec::new(),
            bytes_acknowledged: 0,
            errors: 0,
            spec: spec.clone(),
        }
    }

    fn pages_per_unit(&self) -> u64 {
        self.spec.io_size / self.page_size as u64
    }

    fn region_start(&self) -> u64 {
        self.spec.base_lpn + self.id as u64 * (self.spec.bytes_per_thread / self.page_size as u64)
    }

    fn unit_lpn(&mut self, unit: u64) -> u64 {
        let per = self.spec.units_per_thread();
        let slot = match self.spec.pattern {
            Pattern::Random => self.rng.gen_range(0..per),
            _ => unit % per,
        };
        self.region_start() + slot * self.pages_per_unit()
    }

    fn record(&mut self, started: SimTime, now: SimTime, ok: bool, bytes: u64) {
        let latency_us = now.since(started) as f64 / 1e3;
        self.samples.push(LatencySample {
            request_id: self.next_sample,
            client: self.id,
            bytes,
            latency_us,
            submitted_us: started.as_us(),
            ok,
        });
        self.next_sample += 1;
        if ok {
            self.bytes_acknowledged += bytes;
        }
    }

    /// Think time owed after `bytes` more were written.
    fn think_after(&mut self, bytes: u64) -> u64 {
        let mut sleep = 0;
        for (acc, rule) in self.think_acc.iter_mut().zip(&self.spec.think) {
            *acc += bytes;
            while *acc >= rule.every_bytes {
                *acc -= rule.every_bytes;
                sleep += rule.ns;
            }
        }
        sleep
    }

    fn finish_unit(&mut self, started: SimTime, now: SimTime, ok: bool) -> ClientAction {
        let bytes = self.spec.io_size;
        self.record(started, now, ok, bytes);
        self.phase = Phase::Idle;
        match self.think_after(bytes) {
            0 => self.next(now),
            ns => ClientAction::Sleep(ns),
        }
    }
}

impl Client for WorkloadClient {
    fn next(&mut self, now: SimTime) -> ClientAction {
        match std::mem::replace(&mut self.phase, Phase::Idle) {
            Phase::Idle => {}
            Phase::Writing { first_lpn, started, ok } => {
                if let Some(every) = self.spec.sync_every {
                    self.unsynced.extend(first_lpn..first_lpn + self.pages_per_unit());
                    self.since_sync += self.spec.io_size;
                    if self.since_sync >= every {
                        self.since_sync = 0;
                        let batch = self.unsynced.drain(..).map(|l| IoKind::SyncPage { lpn: l as u32 }).collect();
                        self.phase = Phase::Syncing { started, ok };
                        return ClientAction::Submit(batch);
                    }
                }
                return self.finish_unit(started, now, ok);
            }
            Phase::Syncing { started, ok } => return self.finish_unit(started, now, ok),
        }
        if self.next_unit >= self.total_units {
            return ClientAction::Done;
        }
        let unit = self.next_unit;
        self.next_unit += 1;
        let pass = (unit / self.spec.units_per_thread()) as u32;
        let first_lpn = self.unit_lpn(unit);
        let mut batch = Vec::with_capacity((self.pages_per_unit() * self.spp as u64) as usize);
        for lpn in first_lpn..first_lpn + self.pages_per_unit() {
            for s in 0..self.spp {
                batch.push(IoKind::Write {
                    lsn: lpn * self.spp as u64 + s as u64,
                    data: sector_pattern(lpn, s, pass, self.sector_size as usize),
                });
            }
        }
        self.phase = Phase::Writing { first_lpn, started: now, ok: true };
        ClientAction::Submit(batch)
    }

    fn complete(&mut self, c: &Completion) {
        if c.result.is_err() {
            self.errors += 1;
            match &mut self.phase {
                Phase::Writing { ok, .. } | Phase::Syncing { ok, .. } => *ok = false,
                Phase::Idle => {}
            }
        }
    }
}
