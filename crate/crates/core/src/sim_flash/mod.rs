//! Simulated raw multi-bank NAND flash card.
//!
//! The card is a set of banks grouped under interfaces. Each bank holds erase
//! blocks whose pages must be programmed strictly in order and can only be
//! reprogrammed after the whole block is erased back to all-ones. Requests
//! flow through per-interface write and erase queues and per-bank-pair read
//! queues; the simulated clock of each queue and bank decides when an
//! operation completes.

mod dma;
mod geometry;
mod image;
mod latency;
mod log;
mod timeline;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use dma::{DmaKind, DmaRequest, COMPLETION_QUEUE_DEPTH, QUEUE_DEPTH};
pub use geometry::{FlashGeometry, Lpn, PageAddress, Ppn, MAX_PHYSICAL_PAGES};
pub use image::DeviceProfile;
pub use latency::LatencyModel;
pub use log::{replay, RequestKind, RequestLogEntry, REQUEST_LOG_HEADER};

use crate::error::DeviceError;
use crate::time::SimTime;
use dma::DmaState;
use latency::LatencyNs;
use timeline::Timeline;

pub type DeviceResult<T> = Result<T, DeviceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompletionStatus {
    Ok,
    Failed,
}

/// Written by the card when a request finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionDescriptor {
    pub request_id: u64,
    pub kind: RequestKind,
    pub status: CompletionStatus,
    pub issued_at: SimTime,
    pub completed_at: SimTime,
    /// Data returned by an asynchronous read.
    pub payload: Option<Vec<u8>>,
}

impl CompletionDescriptor {
    pub fn service_latency_us(&self) -> f64 {
        (self.completed_at - self.issued_at) as f64 / 1e3
    }
}

/// Result of a synchronous page read.
#[derive(Debug, Clone)]
pub struct ReadOutcome {
    pub data: Vec<u8>,
    pub spare: Option<Vec<u8>>,
    pub completion: CompletionDescriptor,
}

/// Point-in-time counters of the card.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceStats {
    pub pages_written: u64,
    /// Read operations, each touching one page (data and/or spare).
    pub page_reads: u64,
    pub read_units: u64,
    pub erases: u64,
    pub per_bank_erases: Vec<u64>,
    pub max_block_erase_count: u32,
    pub min_block_erase_count: u32,
    /// Blocks erased more often than the endurance limit.
    pub worn_out_blocks: Vec<(u32, u32)>,
}

#[derive(Clone)]
struct PageCell {
    data: Box<[u8]>,
    spare: Box<[u8]>,
    /// Stands in for the parity chip: checked on every read.
    parity: u32,
}

#[derive(Clone)]
struct BlockSim {
    erase_count: u32,
    bad: bool,
    /// Programmed pages; `pages.len()` is the next writable page.
    pages: Vec<PageCell>,
}

#[derive(Clone)]
struct BankSim {
    blocks: Vec<BlockSim>,
    timeline: Timeline,
}

#[derive(Default)]
struct Counters {
    pages_written: AtomicU64,
    page_reads: AtomicU64,
    read_units: AtomicU64,
    erases: AtomicU64,
}

/// Power-cut injection: after `remaining` more programs the next one is torn
/// and the device halts.
#[derive(Default)]
struct PowerCut {
    armed: Option<u64>,
}

pub struct SimFlashDevice {
    geometry: FlashGeometry,
    model: LatencyModel,
    lat: LatencyNs,
    banks: Vec<Mutex<BankSim>>,
    /// Last booked end per bank, readable without the bank lock.
    bank_last_end: Vec<AtomicU64>,
    queues: Vec<Mutex<Timeline>>,
    counters: Counters,
    per_bank_erases: Vec<AtomicU64>,
    worn: Mutex<BTreeSet<(u32, u32)>>,
    next_request_id: AtomicU64,
    dma: Mutex<DmaState>,
    log: Option<Mutex<Vec<RequestLogEntry>>>,
    halted: AtomicBool,
    power_cut: Mutex<PowerCut>,
}

/// Which DMA queue services an operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueKind {
    Write,
    Erase,
    Read,
}

impl SimFlashDevice {
    /// Creates a fully erased card. `bad_blocks` lists `(bank, block)` pairs.
    pub fn new(
        geometry: FlashGeometry,
        model: LatencyModel,
        bad_blocks: &[(u32, u32)],
    ) -> DeviceResult<Self> {
        geometry.validate()?;
        model.validate()?;
        for &(bank, block) in bad_blocks {
            if bank >= geometry.num_banks() || block >= geometry.blocks_per_bank {
                return Err(DeviceError::Config(format!(
                    "bad block ({bank}, {block}) outside geometry"
                )));
            }
        }
        let banks = (0..geometry.num_banks())
            .map(|b| {
                let blocks = (0..geometry.blocks_per_bank)
                    .map(|k| BlockSim {
                        erase_count: 0,
                        bad: bad_blocks.contains(&(b, k)),
                        pages: Vec::new(),
                    })
                    .collect();
                Mutex::new(BankSim { blocks, timeline: Timeline::default() })
            })
            .collect();
        let n_queues = Self::queue_count(&geometry);
        Ok(SimFlashDevice {
            lat: model.ns(),
            bank_last_end: (0..geometry.num_banks()).map(|_| AtomicU64::new(0)).collect(),
            per_bank_erases: (0..geometry.num_banks()).map(|_| AtomicU64::new(0)).collect(),
            queues: (0..n_queues).map(|_| Mutex::new(Timeline::default())).collect(),
            dma: Mutex::new(DmaState::new(n_queues)),
            banks,
            geometry,
            model,
            counters: Counters::default(),
            worn: Mutex::new(BTreeSet::new()),
            next_request_id: AtomicU64::new(1),
            log: None,
            halted: AtomicBool::new(false),
            power_cut: Mutex::new(PowerCut::default()),
        })
    }

    /// Turns on the per-request log used for CSV export and replay.
    pub fn with_request_log(mut self) -> Self {
        self.log = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    pub fn latency_model(&self) -> &LatencyModel {
        &self.model
    }

    fn queue_count(g: &FlashGeometry) -> usize {
        (2 * g.num_interfaces + g.num_interfaces * g.read_queues_per_interface()) as usize
    }

    /// Number of DMA queues of each kind: (read, write, erase).
    pub fn queue_counts(&self) -> (usize, usize, usize) {
        let g = &self.geometry;
        (
            (g.num_interfaces * g.read_queues_per_interface()) as usize,
            g.num_interfaces as usize,
            g.num_interfaces as usize,
        )
    }

    /// Index of the DMA queue that services `kind` requests for `bank`.
    ///
    /// Queues are laid out as `[write x I][erase x I][read x I*R]`.
    pub fn queue_of(&self, kind: QueueKind, bank: u32) -> usize {
        let g = &self.geometry;
        let iface = g.interface_of(bank);
        let ni = g.num_interfaces;
        match kind {
            QueueKind::Write => iface as usize,
            QueueKind::Erase => (ni + iface) as usize,
            QueueKind::Read => {
                let local = bank % g.banks_per_interface;
                (2 * ni + iface * g.read_queues_per_interface() + local / 2) as usize
            }
        }
    }

    fn check_bank_block(&self, bank: u32, block: u32) -> DeviceResult<()> {
        if bank >= self.geometry.num_banks() || block >= self.geometry.blocks_per_bank {
            return Err(DeviceError::Address(format!("bank {bank} block {block}")));
        }
        Ok(())
    }

    fn check_live(&self) -> DeviceResult<()> {
        if self.halted.load(Ordering::Acquire) {
            Err(DeviceError::Halted)
        } else {
            Ok(())
        }
    }

    fn next_id(&self) -> u64 {
        self.next_request_id.fetch_add(1, Ordering::Relaxed)
    }

    fn book_bank(&self, bank: u32, sim: &mut BankSim, earliest: u64, dur: u64) -> (u64, u64) {
        let r = sim.timeline.reserve(earliest, dur);
        self.bank_last_end[bank as usize].fetch_max(r.1, Ordering::Relaxed);
        r
    }

    fn book_queue(&self, queue: usize, earliest: u64, dur: u64) -> (u64, u64) {
        self.queues[queue].lock().reserve(earliest, dur)
    }

    fn record(&self, entry: RequestLogEntry) {
        if let Some(log) = &self.log {
            log.lock().push(entry);
        }
    }

    /// Programs one page. `data` must be exactly one page; `spare` at most
    /// the spare area (the remainder reads back as `0xFF`).
    pub fn write_page(
        &self,
        addr: PageAddress,
        data: &[u8],
        spare: &[u8],
        at: SimTime,
    ) -> DeviceResult<CompletionDescriptor> {
        self.check_live()?;
        let g = &self.geometry;
        if !g.contains(addr) {
            return Err(DeviceError::Address(addr.to_string()));
        }
        if data.len() != g.page_size as usize || spare.len() > g.spare_per_page as usize {
            return Err(DeviceError::Address(format!("bad buffer length for {addr}")));
        }
        let mut bank = self.banks[addr.bank as usize].lock();
        let block = &mut bank.blocks[addr.block as usize];
        if block.bad {
            return Err(DeviceError::BadBlock { bank: addr.bank, block: addr.block });
        }
        let next = block.pages.len() as u32;
        if addr.page < next {
            return Err(DeviceError::Overwrite(addr));
        }
        if addr.page > next {
            return Err(DeviceError::Sequencing { addr, expected: next });
        }
        let torn = self.take_power_cut();
        let mut spare_buf = vec![0xFFu8; g.spare_per_page as usize].into_boxed_slice();
        spare_buf[..spare.len()].copy_from_slice(spare);
        let mut stored: Box<[u8]> = data.into();
        if torn {
            let half = stored.len() / 2;
            stored[half..].fill(0xFF);
        }
        let parity = crc32fast::hash(&stored);
        block.pages.push(PageCell { data: stored, spare: spare_buf, parity });

        let id = self.next_id();
        let q = self.queue_of(QueueKind::Write, addr.bank);
        let (_, xfer_end) = self.book_queue(q, at.0, self.lat.write_xfer);
        let (_, end) = self.book_bank(addr.bank, &mut bank, xfer_end, self.lat.write_page);
        drop(bank);
        self.counters.pages_written.fetch_add(1, Ordering::Relaxed);
        self.record(RequestLogEntry {
            request_id: id,
            kind: RequestKind::Write,
            bank: addr.bank,
            block: addr.block,
            page: addr.page,
            submit_ts_us: at.as_us(),
            complete_ts_us: SimTime(end).as_us(),
        });
        if torn {
            self.halted.store(true, Ordering::Release);
            return Err(DeviceError::Halted);
        }
        Ok(CompletionDescriptor {
            request_id: id,
            kind: RequestKind::Write,
            status: CompletionStatus::Ok,
            issued_at: at,
            completed_at: SimTime(end),
            payload: None,
        })
    }

    /// Reads `length` bytes at `offset` of a page, plus the spare area when
    /// `want_spare` is set. `length == 0` reads the spare only and is charged
    /// as one read unit. Unwritten pages read as all-ones.
    pub fn read_page(
        &self,
        addr: PageAddress,
        offset: u32,
        length: u32,
        want_spare: bool,
        at: SimTime,
    ) -> DeviceResult<ReadOutcome> {
        self.check_live()?;
        let g = &self.geometry;
        if !g.contains(addr) {
            return Err(DeviceError::Address(addr.to_string()));
        }
        let ru = g.read_unit;
        if offset % ru != 0 || length % ru != 0 || offset + length > g.page_size {
            return Err(DeviceError::Address(format!(
                "read of {length} bytes at {offset} in {addr} not aligned to read units"
            )));
        }
        let units = (length / ru).max(1) as u64;
        let mut bank = self.banks[addr.bank as usize].lock();
        let block = &bank.blocks[addr.block as usize];
        if block.bad {
            return Err(DeviceError::BadBlock { bank: addr.bank, block: addr.block });
        }
        let (data, spare) = match block.pages.get(addr.page as usize) {
            Some(cell) => {
                if crc32fast::hash(&cell.data) != cell.parity {
                    return Err(DeviceError::Corrupt(addr));
                }
                let data = cell.data[offset as usize..(offset + length) as usize].to_vec();
                (data, want_spare.then(|| cell.spare.to_vec()))
            }
            None => (
                vec![0xFF; length as usize],
                want_spare.then(|| vec![0xFF; g.spare_per_page as usize]),
            ),
        };
        let id = self.next_id();
        let (_, sense_end) = self.book_bank(addr.bank, &mut bank, at.0, units * self.lat.read_unit);
        drop(bank);
        let q = self.queue_of(QueueKind::Read, addr.bank);
        let (_, end) = self.book_queue(q, sense_end, units * self.lat.read_xfer);
        self.counters.page_reads.fetch_add(1, Ordering::Relaxed);
        self.counters.read_units.fetch_add(units, Ordering::Relaxed);
        self.record(RequestLogEntry {
            request_id: id,
            kind: RequestKind::Read,
            bank: addr.bank,
            block: addr.block,
            page: addr.page,
            submit_ts_us: at.as_us(),
            complete_ts_us: SimTime(end).as_us(),
        });
        Ok(ReadOutcome {
            data,
            spare,
            completion: CompletionDescriptor {
                request_id: id,
                kind: RequestKind::Read,
                status: CompletionStatus::Ok,
                issued_at: at,
                completed_at: SimTime(end),
                payload: None,
            },
        })
    }

    /// Reads a whole page together with its spare area.
    pub fn read_full(&self, addr: PageAddress, at: SimTime) -> DeviceResult<ReadOutcome> {
        self.read_page(addr, 0, self.geometry.page_size, true, at)
    }

    /// Reads only the spare area of a page.
    pub fn read_spare(&self, addr: PageAddress, at: SimTime) -> DeviceResult<(Vec<u8>, SimTime)> {
        let out = self.read_page(addr, 0, 0, true, at)?;
        Ok((out.spare.unwrap_or_default(), out.completion.completed_at))
    }

    /// Erases a block back to all-ones. Exceeding the endurance limit is
    /// recorded in [`DeviceStats::worn_out_blocks`] but does not fail.
    pub fn erase_block(&self, bank: u32, block: u32, at: SimTime) -> DeviceResult<CompletionDescriptor> {
        self.check_live()?;
        self.check_bank_block(bank, block)?;
        let mut sim = self.banks[bank as usize].lock();
        let blk = &mut sim.blocks[block as usize];
        if blk.bad {
            return Err(DeviceError::BadBlock { bank, block });
        }
        blk.pages.clear();
        blk.erase_count += 1;
        if blk.erase_count > self.geometry.erase_cycles_limit {
            self.worn.lock().insert((bank, block));
        }
        let id = self.next_id();
        let q = self.queue_of(QueueKind::Erase, bank);
        let (_, xfer_end) = self.book_queue(q, at.0, self.lat.erase_xfer);
        let (_, end) = self.book_bank(bank, &mut sim, xfer_end, self.lat.erase_block);
        drop(sim);
        self.counters.erases.fetch_add(1, Ordering::Relaxed);
        self.per_bank_erases[bank as usize].fetch_add(1, Ordering::Relaxed);
        self.record(RequestLogEntry {
            request_id: id,
            kind: RequestKind::Erase,
            bank,
            block,
            page: 0,
            submit_ts_us: at.as_us(),
            complete_ts_us: SimTime(end).as_us(),
        });
        Ok(CompletionDescriptor {
            request_id: id,
            kind: RequestKind::Erase,
            status: CompletionStatus::Ok,
            issued_at: at,
            completed_at: SimTime(end),
            payload: None,
        })
    }

    /// Next page that may be programmed in a block (the count of written pages).
    pub fn next_writable_page(&self, bank: u32, block: u32) -> u32 {
        self.banks[bank as usize].lock().blocks[block as usize].pages.len() as u32
    }

    pub fn erase_count(&self, bank: u32, block: u32) -> u32 {
        self.banks[bank as usize].lock().blocks[block as usize].erase_count
    }

    pub fn is_bad(&self, bank: u32, block: u32) -> bool {
        self.banks[bank as usize].lock().blocks[block as usize].bad
    }

    pub fn bad_blocks(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for (b, bank) in self.banks.iter().enumerate() {
            for (k, blk) in bank.lock().blocks.iter().enumerate() {
                if blk.bad {
                    out.push((b as u32, k as u32));
                }
            }
        }
        out
    }

    /// True when nothing is booked on the bank at instant `t`.
    pub fn bank_idle_at(&self, bank: u32, t: SimTime) -> bool {
        if self.bank_last_end[bank as usize].load(Ordering::Relaxed) <= t.0 {
            return true;
        }
        self.banks[bank as usize].lock().timeline.idle_at(t.0)
    }

    /// Latest completion time booked on a bank so far.
    pub fn bank_busy_until(&self, bank: u32) -> SimTime {
        SimTime(self.bank_last_end[bank as usize].load(Ordering::Relaxed))
    }

    /// Forgets all bookings, e.g. after synthesising an aged image.
    pub fn reset_clocks(&self) {
        for (b, bank) in self.banks.iter().enumerate() {
            bank.lock().timeline.clear();
            self.bank_last_end[b].store(0, Ordering::Relaxed);
        }
        for q in &self.queues {
            q.lock().clear();
        }
    }

    /// Zeroes the operation counters (erase counts per block are kept).
    pub fn reset_counters(&self) {
        self.counters.pages_written.store(0, Ordering::Relaxed);
        self.counters.page_reads.store(0, Ordering::Relaxed);
        self.counters.read_units.store(0, Ordering::Relaxed);
        self.counters.erases.store(0, Ordering::Relaxed);
        for c in &self.per_bank_erases {
            c.store(0, Ordering::Relaxed);
        }
        if let Some(log) = &self.log {
            log.lock().clear();
        }
    }

    pub fn stats(&self) -> DeviceStats {
        let mut max_e = 0;
        let mut min_e = u32::MAX;
        for bank in &self.banks {
            for blk in bank.lock().blocks.iter().filter(|b| !b.bad) {
                max_e = max_e.max(blk.erase_count);
                min_e = min_e.min(blk.erase_count);
            }
        }
        DeviceStats {
            pages_written: self.counters.pages_written.load(Ordering::Relaxed),
            page_reads: self.counters.page_reads.load(Ordering::Relaxed),
            read_units: self.counters.read_units.load(Ordering::Relaxed),
            erases: self.counters.erases.load(Ordering::Relaxed),
            per_bank_erases: self.per_bank_erases.iter().map(|c| c.load(Ordering::Relaxed)).collect(),
            max_block_erase_count: max_e,
            min_block_erase_count: if min_e == u32::MAX { 0 } else { min_e },
            worn_out_blocks: self.worn.lock().iter().copied().collect(),
        }
    }

    /// Snapshot of the request log (empty unless enabled).
    pub fn request_log(&self) -> Vec<RequestLogEntry> {
        self.log.as_ref().map(|l| l.lock().clone()).unwrap_or_default()
    }

    /// Reads the spare of a page without charging time or counters.
    /// Intended for audits and tests.
    pub fn peek_spare(&self, addr: PageAddress) -> Option<Vec<u8>> {
        let bank = self.banks[addr.bank as usize].lock();
        bank.blocks[addr.block as usize].pages.get(addr.page as usize).map(|c| c.spare.to_vec())
    }

    /// Reads page data without charging time or counters.
    pub fn peek_data(&self, addr: PageAddress) -> Option<Vec<u8>> {
        let bank = self.banks[addr.bank as usize].lock();
        bank.blocks[addr.block as usize].pages.get(addr.page as usize).map(|c| c.data.to_vec())
    }

    /// Arms a simulated power cut: the `after`-th following page program
    /// (1-based) stores a torn page and the device halts.
    pub fn arm_power_cut(&self, after: u64) {
        self.power_cut.lock().armed = Some(after.max(1));
    }

    fn take_power_cut(&self) -> bool {
        let mut pc = self.power_cut.lock();
        match pc.armed {
            Some(1) => {
                pc.armed = None;
                true
            }
            Some(n) => {
                pc.armed = Some(n - 1);
                false
            }
            None => false,
        }
    }

    pub fn is_halted(&self) -> bool {
        self.halted.load(Ordering::Acquire)
    }

    /// Power back on after a simulated cut.
    pub fn restore_power(&self) {
        self.power_cut.lock().armed = None;
        self.halted.store(false, Ordering::Release);
    }

    /// Deep copy of the card contents and counters; clocks start fresh.
    pub fn fork(&self) -> SimFlashDevice {
        let dev = SimFlashDevice::new(self.geometry.clone(), self.model.clone(), &[])
            .expect("geometry already validated");
        for (dst, src) in dev.banks.iter().zip(&self.banks) {
            let mut d = dst.lock();
            d.blocks = src.lock().blocks.clone();
        }
        for (d, s) in dev.per_bank_erases.iter().zip(&self.per_bank_erases) {
            d.store(s.load(Ordering::Relaxed), Ordering::Relaxed);
        }
        *dev.worn.lock() = self.worn.lock().clone();
        dev
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev() -> SimFlashDevice {
        SimFlashDevice::new(FlashGeometry::tiny(), LatencyModel::default(), &[]).unwrap()
    }

    fn page(g: &FlashGeometry, v: u8) -> Vec<u8> {
        vec![v; g.page_size as usize]
    }

    #[test]
    fn full_card_queue_layout() {
        let g = FlashGeometry { blocks_per_bank: 4, ..FlashGeometry::full_512g() };
        let d = SimFlashDevice::new(g, LatencyModel::default(), &[]).unwrap();
        assert_eq!(d.geometry().num_banks(), 64);
        assert_eq!(d.queue_counts(), (32, 4, 4));
        // banks 0 and 1 share a read queue, banks 0 and 2 do not
        assert_eq!(d.queue_of(QueueKind::Read, 0), d.queue_of(QueueKind::Read, 1));
        assert_ne!(d.queue_of(QueueKind::Read, 0), d.queue_of(QueueKind::Read, 2));
        // one write queue per interface
        assert_eq!(d.queue_of(QueueKind::Write, 0), d.queue_of(QueueKind::Write, 15));
        assert_ne!(d.queue_of(QueueKind::Write, 15), d.queue_of(QueueKind::Write, 16));
    }

    #[test]
    fn fresh_device_reads_erased() {
        let g = FlashGeometry {
            num_interfaces: 1,
            banks_per_interface: 1,
            blocks_per_bank: 4,
            pages_per_block: 4,
            ..FlashGeometry::tiny()
        };
        assert_eq!(g.total_pages(), 16);
        let d = SimFlashDevice::new(g.clone(), LatencyModel::default(), &[]).unwrap();
        assert!(d.bad_blocks().is_empty());
        for k in 0..4 {
            for p in 0..4 {
                let r = d.read_full(PageAddress::new(0, k, p), SimTime::ZERO).unwrap();
                assert!(r.data.iter().all(|&b| b == 0xFF));
                assert!(r.spare.unwrap().iter().all(|&b| b == 0xFF));
            }
        }
        assert_eq!(d.stats().pages_written, 0);
        assert_eq!(d.stats().erases, 0);
    }

    #[test]
    fn sequential_programming_rules() {
        let d = dev();
        let g = d.geometry().clone();
        let t = SimTime::ZERO;
        d.write_page(PageAddress::new(0, 0, 0), &page(&g, 1), &[], t).unwrap();
        d.write_page(PageAddress::new(0, 0, 1), &page(&g, 2), &[], t).unwrap();
        assert!(matches!(
            d.write_page(PageAddress::new(0, 0, 3), &page(&g, 3), &[], t),
            Err(DeviceError::Sequencing { expected: 2, .. })
        ));
        assert!(matches!(
            d.write_page(PageAddress::new(0, 0, 0), &page(&g, 3), &[], t),
            Err(DeviceError::Overwrite(_))
        ));
        d.write_page(PageAddress::new(1, 0, 0), &page(&g, 4), &[], t).unwrap();
        assert!(matches!(
            d.write_page(PageAddress::new(1, 0, 2), &page(&g, 4), &[], t),
            Err(DeviceError::Sequencing { .. })
        ));
    }

    #[test]
    fn read_back_and_striped_unit() {
        let d = dev();
        let g = d.geometry().clone();
        let mut data = page(&g, 0);
        for (i, b) in data.iter_mut().enumerate() {
            *b = (i / g.read_unit as usize) as u8;
        }
        d.write_page(PageAddress::new(0, 0, 0), &data, &[9, 9], SimTime::ZERO).unwrap();
        let r = d.read_full(PageAddress::new(0, 0, 0), SimTime::ZERO).unwrap();
        assert_eq!(r.data, data);
        let spare = r.spare.unwrap();
        assert_eq!(&spare[..2], &[9, 9]);
        assert!(spare[2..].iter().all(|&b| b == 0xFF));
        let first = d.read_page(PageAddress::new(0, 0, 0), 0, g.read_unit, false, SimTime::ZERO).unwrap();
        assert_eq!(first.data, data[..g.read_unit as usize].to_vec());
        assert!(d.read_page(PageAddress::new(0, 0, 0), 100, g.read_unit, false, SimTime::ZERO).is_err());
        assert!(d.read_page(PageAddress::new(0, 0, 0), 0, g.page_size * 2, false, SimTime::ZERO).is_err());
    }

    #[test]
    fn erase_resets_and_counts() {
        let d = dev();
        let g = d.geometry().clone();
        for p in 0..3 {
            d.write_page(PageAddress::new(0, 2, p), &page(&g, 5), &[], SimTime::ZERO).unwrap();
        }
        d.erase_block(0, 2, SimTime::ZERO).unwrap();
        assert_eq!(d.next_writable_page(0, 2), 0);
        let r = d.read_full(PageAddress::new(0, 2, 0), SimTime::ZERO).unwrap();
        assert!(r.data.iter().all(|&b| b == 0xFF));
        d.erase_block(0, 2, SimTime::ZERO).unwrap();
        assert_eq!(d.erase_count(0, 2), 2);
        d.write_page(PageAddress::new(0, 2, 0), &page(&g, 5), &[], SimTime::ZERO).unwrap();
    }

    #[test]
    fn wear_out_flag_raised_past_limit() {
        let g = FlashGeometry { erase_cycles_limit: 100_000, ..FlashGeometry::tiny() };
        let d = SimFlashDevice::new(g, LatencyModel::default(), &[]).unwrap();
        for _ in 0..100_000 {
            d.erase_block(1, 3, SimTime::ZERO).unwrap();
        }
        assert!(d.stats().worn_out_blocks.is_empty());
        d.erase_block(1, 3, SimTime::ZERO).unwrap();
        assert_eq!(d.stats().worn_out_blocks, vec![(1, 3)]);
        assert_eq!(d.erase_count(1, 3), 100_001);
    }

    #[test]
    fn bad_blocks_rejected() {
        let d = SimFlashDevice::new(FlashGeometry::tiny(), LatencyModel::default(), &[(1, 2)]).unwrap();
        let g = d.geometry().clone();
        assert_eq!(d.bad_blocks(), vec![(1, 2)]);
        assert!(matches!(
            d.write_page(PageAddress::new(1, 2, 0), &page(&g, 0), &[], SimTime::ZERO),
            Err(DeviceError::BadBlock { .. })
        ));
        assert!(matches!(d.erase_block(1, 2, SimTime::ZERO), Err(DeviceError::BadBlock { .. })));
        assert!(SimFlashDevice::new(FlashGeometry::tiny(), LatencyModel::default(), &[(9, 0)]).is_err());
    }

    #[test]
    fn parallel_banks_overlap_in_time() {
        // banks 0 and 4 sit on different interfaces
        let g = FlashGeometry { num_interfaces: 2, banks_per_interface: 4, ..FlashGeometry::tiny() };
        let d = SimFlashDevice::new(g.clone(), LatencyModel::default(), &[]).unwrap();
        let m = LatencyModel::default();
        let a = d.write_page(PageAddress::new(0, 0, 0), &page(&g, 1), &[], SimTime::ZERO).unwrap();
        let b = d.write_page(PageAddress::new(4, 0, 0), &page(&g, 1), &[], SimTime::ZERO).unwrap();
        let total = a.completed_at.max(b.completed_at).as_us();
        let single = m.write_page_us + m.write_xfer_us;
        assert!(total < 2.0 * single);
        // same bank serialises
        let c = d.write_page(PageAddress::new(0, 0, 1), &page(&g, 1), &[], SimTime::ZERO).unwrap();
        assert!(c.completed_at.as_us() >= 2.0 * m.write_page_us);
    }

    #[test]
    fn power_cut_tears_page_and_halts() {
        let d = dev();
        let g = d.geometry().clone();
        d.arm_power_cut(2);
        d.write_page(PageAddress::new(0, 0, 0), &page(&g, 1), &[], SimTime::ZERO).unwrap();
        assert_eq!(
            d.write_page(PageAddress::new(0, 0, 1), &page(&g, 1), &[], SimTime::ZERO),
            Err(DeviceError::Halted)
        );
        assert!(d.is_halted());
        assert!(d.erase_block(0, 0, SimTime::ZERO).is_err());
        d.restore_power();
        let torn = d.peek_data(PageAddress::new(0, 0, 1)).unwrap();
        assert_eq!(torn[0], 1);
        assert_eq!(*torn.last().unwrap(), 0xFF);
    }

    #[test]
    fn stats_count_operations() {
        let d = dev();
        let g = d.geometry().clone();
        for p in 0..5 {
            d.write_page(PageAddress::new(0, 1, p), &page(&g, 1), &[], SimTime::ZERO).unwrap();
        }
        d.read_full(PageAddress::new(0, 1, 0), SimTime::ZERO).unwrap();
        d.read_spare(PageAddress::new(0, 1, 1), SimTime::ZERO).unwrap();
        d.erase_block(0, 1, SimTime::ZERO).unwrap();
        let s = d.stats();
        assert_eq!(s.pages_written, 5);
        assert_eq!(s.page_reads, 2);
        assert_eq!(s.read_units, 8 + 1);
        assert_eq!(s.erases, 1);
        assert_eq!(s.per_bank_erases, vec![1, 0]);
        assert_eq!(s.max_block_erase_count, 1);
        assert_eq!(s.min_block_erase_count, 0);
    }
}
