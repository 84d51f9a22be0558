//! Direct block synthesis for aging a card before an experiment. Pages are
//! really programmed, with coherent spare areas, so audits, reads, recovery
//! and checkpoints all see a consistent image.

use crate::error::{Error, Result};
use crate::ftl::Ftl;
use crate::sim_flash::{Lpn, PageAddress};
use crate::spare::{BlockType, SpareMetadata, LPN_NONE};
use crate::time::SimTime;

impl Ftl {
    /// Programs a whole free block of `bank`. `lpns[p]` is the logical page
    /// written at page `p`, or [`LPN_NONE`] for stale filler. Mapped logical
    /// pages move to the new block; their old copies become invalid.
    /// Requires quiescence and that none of the pages is buffered.
    pub fn inject_block(
        &self,
        bank: u32,
        lpns: &[u32],
        data: impl Fn(u32) -> Vec<u8>,
        at: SimTime,
    ) -> Result<(u32, SimTime)> {
        let g = self.geometry();
        if lpns.len() != g.pages_per_block as usize {
            return Err(Error::Config(format!("{} pages given for a {}-page block", lpns.len(), g.pages_per_block)));
        }
        for &l in lpns.iter().filter(|&&l| l != LPN_NONE) {
            self.state.check_lpn(Lpn(l))?;
            if self.state.lookup.find(Lpn(l)).is_some() {
                return Err(Error::Config(format!("logical page {l} is buffered")));
            }
        }
        let block = {
            let mut guard = self.state.bank(bank).lock();
            self.state.alloc_free_block(&mut guard, 0).map_err(|_| Error::Exhausted { bank: Some(bank) })?
        };
        let filler = vec![0u8; g.page_size as usize];
        let mut t = at;
        for (p, &l) in lpns.iter().enumerate() {
            let addr = PageAddress::new(bank, block, p as u32);
            let page = if l == LPN_NONE { filler.clone() } else { data(l) };
            let spare = SpareMetadata::new(BlockType::Data, l, self.state.seq.next(), &page).encode();
            t = t.max(self.dev.write_page(addr, &page, &spare, at)?.completed_at);
            if l != LPN_NONE {
                let entry = self.state.map.lock(Lpn(l));
                let ppn = g.ppn(addr);
                if let Some(old) = entry.update(ppn) {
                    self.state.mark_invalid(old);
                }
                self.state.mark_valid(ppn);
            }
        }
        Ok((block, t))
    }
}
