use serde::{Deserialize, Serialize};

use crate::error::DeviceError;
use crate::time::us_to_ns;

/// Service times of the simulated card.
///
/// An operation occupies its DMA queue for the transfer time and its bank for
/// the array time (program, read or erase). Writes transfer first and then
/// program; reads sense first and then transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    /// Program time of one full page.
    pub write_page_us: f64,
    /// Sense time per read unit.
    pub read_unit_us: f64,
    pub erase_block_us: f64,
    /// Queue occupancy to move one page to the card.
    pub write_xfer_us: f64,
    /// Queue occupancy per read unit moved back to the host.
    pub read_xfer_us: f64,
    pub erase_xfer_us: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            write_page_us: 200.0,
            read_unit_us: 100.0,
            erase_block_us: 2000.0,
            write_xfer_us: 20.0,
            read_xfer_us: 5.0,
            erase_xfer_us: 1.0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let positive = [self.write_page_us, self.read_unit_us, self.erase_block_us];
        let non_negative = [self.write_xfer_us, self.read_xfer_us, self.erase_xfer_us];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(DeviceError::Config("latencies must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn ns(&self) -> LatencyNs {
        LatencyNs {
            write_page: us_to_ns(self.write_page_us),
            read_unit: us_to_ns(self.read_unit_us),
            erase_block: us_to_ns(self.erase_block_us),
            write_xfer: us_to_ns(self.write_xfer_us),
            read_xfer: us_to_ns(self.read_xfer_us),
            erase_xfer: us_to_ns(self.erase_xfer_us),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LatencyNs {
    pub write_page: u64,
    pub read_unit: u64,
    pub erase_block: u64,
    pub write_xfer: u64,
    pub read_xfer: u64,
    pub erase_xfer: u64,
}
