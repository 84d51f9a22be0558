//! Test oracles for parftl: a shadow in-memory block device that replays a
//! randomized operation stream against a running engine, and invariant
//! checks over the FTL tables and the simulated card.
//!
//! Every check returns `Err` with a description of the first violation.

pub mod props;
pub mod shadow;

use std::sync::Arc;

use parftl::config::EngineConfig;
use parftl::gc::GcPolicy;
use parftl::sim_flash::{DeviceProfile, FlashGeometry, SimFlashDevice};

pub const SECTOR: usize = 512;

/// Small card that fills quickly: 4 banks on 2 interfaces, 16 blocks of 8
/// pages each.
pub fn geometry() -> FlashGeometry {
    FlashGeometry {
        num_interfaces: 2,
        banks_per_interface: 2,
        blocks_per_bank: 16,
        pages_per_block: 8,
        ..FlashGeometry::tiny()
    }
}

pub fn device(g: &FlashGeometry) -> Arc<SimFlashDevice> {
    Arc::new(DeviceProfile::new(g.clone()).create_device().expect("valid geometry"))
}

/// Engine settings for checks: few buffers so evictions are common, and a
/// short idle-flush delay so daemon ticks flush.
pub fn config(policy: GcPolicy, seed: u64, deterministic: bool) -> EngineConfig {
    let mut c = EngineConfig { seed, deterministic, ..EngineConfig::default() };
    c.io.num_queues = 4;
    c.io.num_buffers = 6;
    c.io.idle_flush_seconds = 0.01;
    c.io.daemon_period_ms = 5;
    c.gc.policy = policy;
    c.gc.max_gc_threads = 2;
    c
}

/// Content of version `version` of sector `lsn`. Version 0 is the zero
/// fill of a never-written sector.
pub fn sector_data(lsn: u64, version: u32) -> Vec<u8> {
    if version == 0 {
        return vec![0; SECTOR];
    }
    let mut out = Vec::with_capacity(SECTOR);
    out.extend_from_slice(&lsn.to_le_bytes());
    out.extend_from_slice(&version.to_le_bytes());
    let mut x = (lsn.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ version as u64) | 1;
    while out.len() < SECTOR {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        out.push(x as u8);
    }
    out
}

/// Inverse of [`sector_data`]; `None` when `data` is no version of `lsn`.
pub fn decode_version(lsn: u64, data: &[u8]) -> Option<u32> {
    if data.iter().all(|&b| b == 0) {
        return Some(0);
    }
    let v = u32::from_le_bytes(data.get(8..12)?.try_into().ok()?);
    (v != 0 && sector_data(lsn, v) == data).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versions_round_trip() {
        for lsn in [0, 1, 777] {
            for v in [0, 1, 2, 90_000] {
                assert_eq!(decode_version(lsn, &sector_data(lsn, v)), Some(v));
            }
        }
        assert_eq!(decode_version(3, &sector_data(4, 1)), None);
        assert_eq!(decode_version(3, &[7; SECTOR]), None);
    }

    #[test]
    fn check_setup_resolves() {
        let g = geometry();
        g.validate().unwrap();
        config(GcPolicy::Pllgc, 0, true).resolve(&g).unwrap();
    }
}
