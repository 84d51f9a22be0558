use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::{CompletionDescriptor, DeviceResult, QueueKind, SimFlashDevice};
use crate::error::DeviceError;
use crate::sim_flash::PageAddress;
use crate::time::SimTime;

/// Requests a queue can hold before the submitter is pushed back.
pub const QUEUE_DEPTH: usize = 256;
/// Completion descriptors the card can hold before it stops accepting work.
pub const COMPLETION_QUEUE_DEPTH: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum DmaKind {
    Read { offset: u32, length: u32 },
    Write { data: Vec<u8>, spare: Vec<u8> },
    /// Block granularity: the page index of the address is ignored.
    Erase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmaRequest {
    pub addr: PageAddress,
    pub kind: DmaKind,
}

struct Pending {
    queue: usize,
    desc: CompletionDescriptor,
}

pub(super) struct DmaState {
    per_queue: Vec<usize>,
    ready: BinaryHeap<Reverse<(u64, u64)>>,
    pending: HashMap<u64, Pending>,
}

impl DmaState {
    pub fn new(queues: usize) -> Self {
        DmaState { per_queue: vec![0; queues], ready: BinaryHeap::new(), pending: HashMap::new() }
    }
}

impl SimFlashDevice {
    /// Queues a request. The card services it against the simulated clocks
    /// at once; its descriptor becomes visible through [`poll_completions`]
    /// in completion-time order, which may differ from submission order.
    ///
    /// [`poll_completions`]: SimFlashDevice::poll_completions
    pub fn submit_dma(&self, req: DmaRequest, at: SimTime) -> DeviceResult<u64> {
        let qkind = match req.kind {
            DmaKind::Read { .. } => QueueKind::Read,
            DmaKind::Write { .. } => QueueKind::Write,
            DmaKind::Erase => QueueKind::Erase,
        };
        if req.addr.bank >= self.geometry.num_banks() {
            return Err(DeviceError::Address(req.addr.to_string()));
        }
        let queue = self.queue_of(qkind, req.addr.bank);
        let mut st = self.dma.lock();
        if st.per_queue[queue] >= QUEUE_DEPTH || st.pending.len() >= COMPLETION_QUEUE_DEPTH {
            return Err(DeviceError::Backpressure { queue });
        }
        let desc = match req.kind {
            DmaKind::Read { offset, length } => {
                let out = self.read_page(req.addr, offset, length, true, at)?;
                CompletionDescriptor { payload: Some(out.data), ..out.completion }
            }
            DmaKind::Write { data, spare } => self.write_page(req.addr, &data, &spare, at)?,
            DmaKind::Erase => self.erase_block(req.addr.bank, req.addr.block, at)?,
        };
        let id = desc.request_id;
        st.per_queue[queue] += 1;
        st.ready.push(Reverse((desc.completed_at.0, id)));
        st.pending.insert(id, Pending { queue, desc });
        Ok(id)
    }

    /// Pops up to `max` completion descriptors, earliest completion first.
    pub fn poll_completions(&self, max: usize) -> Vec<CompletionDescriptor> {
        let mut st = self.dma.lock();
        let mut out = Vec::new();
        while out.len() < max {
            let Some(Reverse((_, id))) = st.ready.pop() else { break };
            let p = st.pending.remove(&id).expect("ready entry without pending request");
            st.per_queue[p.queue] -= 1;
            out.push(p.desc);
        }
        out
    }

    /// Requests accepted but not yet polled.
    pub fn outstanding(&self) -> usize {
        self.dma.lock().pending.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_flash::{FlashGeometry, LatencyModel};
    use std::collections::HashSet;

    fn write_req(g: &FlashGeometry, bank: u32, block: u32, page: u32) -> DmaRequest {
        DmaRequest {
            addr: PageAddress::new(bank, block, page),
            kind: DmaKind::Write { data: vec![page as u8; g.page_size as usize], spare: vec![] },
        }
    }

    #[test]
    fn single_request_single_completion() {
        let d = SimFlashDevice::new(FlashGeometry::tiny(), LatencyModel::default(), &[]).unwrap();
        let g = d.geometry().clone();
        let id = d.submit_dma(write_req(&g, 0, 0, 0), SimTime::ZERO).unwrap();
        let c = d.poll_completions(10);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].request_id, id);
        assert!(d.poll_completions(10).is_empty());
    }

    #[test]
    fn queue_depth_backpressure() {
        let g = FlashGeometry { pages_per_block: 64, ..FlashGeometry::tiny() };
        let d = SimFlashDevice::new(g.clone(), LatencyModel::default(), &[]).unwrap();
        // both banks of the tiny card share one write queue
        let addrs: Vec<(u32, u32, u32)> =
            (0..2).flat_map(|bank| (0..3).flat_map(move |blk| (0..64).map(move |p| (bank, blk, p)))).collect();
        for &(b, k, p) in &addrs[..QUEUE_DEPTH] {
            d.submit_dma(write_req(&g, b, k, p), SimTime::ZERO).unwrap();
        }
        let (b, k, p) = addrs[QUEUE_DEPTH];
        assert!(matches!(
            d.submit_dma(write_req(&g, b, k, p), SimTime::ZERO),
            Err(DeviceError::Backpressure { .. })
        ));
        d.poll_completions(1);
        assert_eq!(d.outstanding(), QUEUE_DEPTH - 1);
        d.submit_dma(write_req(&g, b, k, p), SimTime::ZERO).unwrap();
    }

    #[test]
    fn out_of_order_across_banks_and_conservation() {
        let g = FlashGeometry { num_interfaces: 2, banks_per_interface: 2, ..FlashGeometry::tiny() };
        let d = SimFlashDevice::new(g.clone(), LatencyModel::default(), &[]).unwrap();
        let mut ids = HashSet::new();
        // a long erase on bank 0 then a write on bank 2 (other interface)
        ids.insert(
            d.submit_dma(DmaRequest { addr: PageAddress::new(0, 1, 0), kind: DmaKind::Erase }, SimTime::ZERO)
                .unwrap(),
        );
        ids.insert(d.submit_dma(write_req(&g, 2, 0, 0), SimTime::ZERO).unwrap());
        for p in 0..4 {
            ids.insert(d.submit_dma(write_req(&g, 1, 0, p), SimTime::ZERO).unwrap());
        }
        ids.insert(
            d.submit_dma(
                DmaRequest { addr: PageAddress::new(1, 0, 2), kind: DmaKind::Read { offset: 0, length: 512 } },
                SimTime::ZERO,
            )
            .unwrap(),
        );
        let done = d.poll_completions(100);
        assert_eq!(done.len(), ids.len());
        let got: HashSet<u64> = done.iter().map(|c| c.request_id).collect();
        assert_eq!(got, ids);
        let submitted_first = done.iter().position(|c| c.kind == super::super::RequestKind::Erase).unwrap();
        assert!(submitted_first > 0, "erase should not complete first");
        let read = done.iter().find(|c| c.payload.is_some()).unwrap();
        assert_eq!(read.payload.as_ref().unwrap(), &vec![2u8; 512]);
        for w in done.windows(2) {
            assert!(w[0].completed_at <= w[1].completed_at);
        }
    }
}
