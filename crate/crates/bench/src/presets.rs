//! Desk-scale versions of the evaluation setups. Card and data sizes are
//! divided by `size_divisor`, think times by `think_divisor`. A 32KB
//! logical write on the full-size card becomes one 4KB page on the desk
//! cards, whose pages are 8 times smaller.

use serde::{Deserialize, Serialize};

use parftl::config::EngineConfig;
use parftl::gc::GcPolicy;
use parftl::sim_flash::{DeviceProfile, FlashGeometry};
use parftl::{Error, Result};

use crate::aging::AgingSpec;
use crate::workload::{Pattern, ThinkRule, WorkloadSpec};

const MB: u64 = 1 << 20;
const GB: u64 = 1 << 30;
const MS: u64 = 1_000_000;
const SEC: u64 = 1_000_000_000;

pub const PRESET_NAMES: [&str; 4] = ["queue-scaling", "npgc-vs-pllgc", "adaptive-vs-pllgc", "init-scan"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub size_divisor: u64,
    pub think_divisor: u64,
}

impl Default for Scale {
    fn default() -> Self {
        Scale { size_divisor: 64, think_divisor: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub device: DeviceProfile,
    pub engine: EngineConfig,
    pub workload: WorkloadSpec,
    pub aging: Option<AgingSpec>,
    /// Policies compared by the preset; the first is the baseline.
    pub policies: Vec<GcPolicy>,
    /// Queue counts swept by the scaling preset.
    pub queue_sweep: Vec<usize>,
    /// Latency boundary counted in reports, in microseconds.
    pub threshold_us: f64,
}

fn aged(g: &FlashGeometry, skip_lpns_below: u64, seed: u64) -> AgingSpec {
    let bpb = g.blocks_per_bank as f64;
    AgingSpec {
        free_mean: bpb * 0.3,
        free_spread: bpb * 0.05,
        valid_mean: 0.5,
        valid_spread: 0.2,
        skip_lpns_below: skip_lpns_below as u32,
        seed,
    }
}

/// Desk-scale setup `name` with seeds derived from `seed`.
pub fn preset(name: &str, seed: u64, scale: &Scale) -> Result<Preset> {
    let page = |g: &FlashGeometry| g.page_size as u64;
    let size = |bytes: u64| bytes / scale.size_divisor;
    let think = |ns: u64| ns / scale.think_divisor;
    let mut engine = EngineConfig { seed, ..EngineConfig::default() };
    engine.io.num_queues = 64;
    engine.io.num_buffers = 256;
    match name {
        "npgc-vs-pllgc" => {
            let g = FlashGeometry::desk_8bank();
            engine.gc.max_gc_threads = 1;
            let workload = WorkloadSpec {
                num_client_threads: 1,
                bytes_per_thread: size(GB),
                io_size: page(&g),
                pattern: Pattern::Overwrite(16),
                sync_every: Some(page(&g)),
                think: vec![],
                base_lpn: 0,
                seed,
            };
            Ok(Preset {
                name: name.into(),
                aging: Some(aged(&g, workload.footprint_pages(g.page_size), seed)),
                device: DeviceProfile::new(g),
                engine,
                workload,
                policies: vec![GcPolicy::Npgc, GcPolicy::Pllgc],
                queue_sweep: vec![],
                threshold_us: 2000.0,
            })
        }
        "adaptive-vs-pllgc" => {
            let g = FlashGeometry::desk_8bank();
            engine.gc.max_gc_threads = 8;
            let workload = WorkloadSpec {
                num_client_threads: 128,
                bytes_per_thread: size(4 * MB),
                io_size: page(&g),
                pattern: Pattern::Overwrite(16),
                sync_every: Some(page(&g)),
                think: vec![
                    ThinkRule { every_bytes: page(&g), ns: think(20 * MS) },
                    ThinkRule { every_bytes: size(2 * MB), ns: think(10 * SEC) },
                ],
                base_lpn: 0,
                seed,
            };
            Ok(Preset {
                name: name.into(),
                aging: Some(aged(&g, workload.footprint_pages(g.page_size), seed)),
                device: DeviceProfile::new(g),
                engine,
                workload,
                policies: vec![GcPolicy::Pllgc, GcPolicy::Adaptive],
                queue_sweep: vec![],
                threshold_us: 2000.0,
            })
        }
        "queue-scaling" => {
            let g = FlashGeometry::desk_64bank();
            let workload = WorkloadSpec {
                num_client_threads: 64,
                bytes_per_thread: size(32 * MB),
                io_size: page(&g),
                pattern: Pattern::Sequential,
                sync_every: None,
                think: vec![],
                base_lpn: 0,
                seed,
            };
            Ok(Preset {
                name: name.into(),
                device: DeviceProfile::new(g),
                engine,
                workload,
                aging: None,
                policies: vec![GcPolicy::Pllgc],
                queue_sweep: vec![1, 2, 4, 8, 16, 32, 64],
                threshold_us: 2000.0,
            })
        }
        "init-scan" => {
            let g = FlashGeometry::desk_8bank();
            // half of the physical pages, written by 16 threads
            let half = g.total_pages() * page(&g) / 2;
            let workload = WorkloadSpec {
                num_client_threads: 16,
                bytes_per_thread: half / 16,
                io_size: page(&g),
                pattern: Pattern::Sequential,
                sync_every: None,
                think: vec![],
                base_lpn: 0,
                seed,
            };
            Ok(Preset {
                name: name.into(),
                device: DeviceProfile::new(g),
                engine,
                workload,
                aging: None,
                policies: vec![GcPolicy::Pllgc],
                queue_sweep: vec![],
                threshold_us: 2000.0,
            })
        }
        other => Err(Error::Config(format!("unknown preset {other}; expected one of {}", PRESET_NAMES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_and_fit() {
        for name in PRESET_NAMES {
            let p = preset(name, 1, &Scale::default()).unwrap();
            let g = &p.device.geometry;
            let r = p.engine.resolve(g).unwrap();
            p.workload.validate(g.page_size).unwrap();
            assert!(p.workload.base_lpn + p.workload.footprint_pages(g.page_size) <= r.num_lpns as u64, "{name}");
        }
        assert!(preset("nope", 1, &Scale::default()).is_err());
    }

    #[test]
    fn gc_presets_follow_the_evaluation_setup() {
        let p = preset("npgc-vs-pllgc", 1, &Scale::default()).unwrap();
        assert_eq!(p.device.geometry.num_banks(), 8);
        assert_eq!(p.device.geometry.blocks_per_bank, 64);
        assert_eq!(p.engine.gc.max_gc_threads, 1);
        assert_eq!(p.workload.num_client_threads, 1);
        assert_eq!(p.workload.pattern, Pattern::Overwrite(16));
        let p = preset("adaptive-vs-pllgc", 1, &Scale::default()).unwrap();
        assert_eq!(p.engine.gc.max_gc_threads, 8);
        assert_eq!(p.workload.num_client_threads, 128);
        assert_eq!(p.workload.think[0].ns, 200_000);
        assert_eq!(p.workload.think[1].ns, 100_000_000);
    }
}
