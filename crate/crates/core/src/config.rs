use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gc::{AdaptiveMap, GcLevelTable, GcPolicy};
use crate::sim_flash::{FlashGeometry, DeviceProfile};

/// How requests are spread over the submission queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dispatch {
    /// Queue `lpn mod Q`, so all requests for one page meet one worker.
    LpnMod,
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoConfig {
    pub num_queues: usize,
    pub num_buffers: usize,
    /// Bytes per buffer; must equal the flash page size when set.
    pub buffer_size: Option<u32>,
    pub idle_flush_seconds: f64,
    /// Period of the idle-flush daemon.
    pub daemon_period_ms: u64,
    pub dispatch: Dispatch,
    /// Simulated CPU time charged to every request a worker handles.
    pub cpu_op_ns: u64,
    /// Cap of the exponential retry delay when buffers are contended.
    pub max_backoff_us: u64,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            num_queues: 64,
            num_buffers: 256,
            buffer_size: None,
            idle_flush_seconds: 60.0,
            daemon_period_ms: 1000,
            dispatch: Dispatch::LpnMod,
            cpu_op_ns: 500,
            max_backoff_us: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcConfig {
    pub policy: GcPolicy,
    pub max_gc_threads: usize,
    /// Level table; derived from the geometry when absent.
    pub levels: Option<GcLevelTable>,
    /// Adaptive throttling map; derived from the queue count when absent.
    pub adaptive: Option<AdaptiveMap>,
    /// Collections one inline GC may run; by default as many as the bank
    /// needs to leave every level.
    pub max_npgc_rounds: Option<u32>,
    /// Sleep of a collector that found nothing to do.
    pub idle_poll_us: u64,
    /// Extra free blocks a bank needs before its exclusive flag clears.
    pub exclusive_hysteresis: u32,
    /// Free blocks per bank that only the collector may use.
    pub reserve_blocks: u32,
    /// Record victim, copy, erase and throttling events.
    pub event_log: bool,
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig {
            policy: GcPolicy::Pllgc,
            max_gc_threads: 8,
            levels: None,
            adaptive: None,
            max_npgc_rounds: None,
            idle_poll_us: 1000,
            exclusive_hysteresis: 2,
            reserve_blocks: 1,
            event_log: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointConfig {
    /// Blocks at the top and at the bottom of each bank that may hold the
    /// head of the checkpoint chain.
    pub window_k: u32,
    /// Write a checkpoint on clean shutdown.
    pub save_on_shutdown: bool,
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        CheckpointConfig { window_k: 4, save_on_shutdown: true }
    }
}

/// Everything needed to start an engine on a card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub io: IoConfig,
    pub gc: GcConfig,
    pub checkpoint: CheckpointConfig,
    /// Fraction of physical pages hidden from the host.
    pub overprovision: f64,
    /// Seed of the deterministic scheduler and of tie-breaking choices.
    pub seed: u64,
    /// Run on the deterministic scheduler instead of OS threads.
    pub deterministic: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            io: IoConfig::default(),
            gc: GcConfig::default(),
            checkpoint: CheckpointConfig::default(),
            overprovision: 0.25,
            seed: 0,
            deterministic: true,
        }
    }
}

/// Configuration with geometry-dependent defaults filled in.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub io: IoConfig,
    pub gc: GcConfig,
    pub levels: GcLevelTable,
    pub adaptive: AdaptiveMap,
    pub checkpoint: CheckpointConfig,
    pub num_lpns: u32,
    pub seed: u64,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self, g: &FlashGeometry) -> Result<ResolvedConfig> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.io.num_queues == 0 || self.io.num_queues > 4096 {
            return err("num_queues must be in 1..=4096");
        }
        if self.io.num_buffers == 0 {
            return err("at least one buffer is required");
        }
        if let Some(bs) = self.io.buffer_size {
            if bs != g.page_size {
                return err("buffer_size must equal the flash page size");
            }
        }
        if !(self.io.idle_flush_seconds > 0.0) {
            return err("idle_flush_seconds must be positive");
        }
        if self.io.daemon_period_ms == 0 {
            return err("daemon_period_ms must be positive");
        }
        if self.gc.max_gc_threads == 0 && self.gc.policy.uses_workers() {
            return err("background GC policies need at least one GC thread");
        }
        if !(0.0..1.0).contains(&self.overprovision) {
            return err("overprovision must be in [0, 1)");
        }
        let k = self.checkpoint.window_k;
        if k == 0 || k > g.blocks_per_bank / 2 {
            return err("checkpoint window_k must be in 1..=blocks_per_bank/2");
        }
        let levels = self.gc.levels.clone().unwrap_or_else(|| GcLevelTable::default_for(g));
        levels.validate(g)?;
        if self.gc.reserve_blocks > levels.panic_threshold().max(1) {
            return err("reserve_blocks must not exceed the last GC level's free threshold");
        }
        let adaptive = self
            .gc
            .adaptive
            .clone()
            .unwrap_or_else(|| AdaptiveMap::default_for(self.io.num_queues, self.gc.max_gc_threads));
        adaptive.validate()?;
        let num_lpns = ((g.total_pages() as f64) * (1.0 - self.overprovision)).floor() as u64;
        if num_lpns == 0 {
            return err("no logical pages left after overprovisioning");
        }
        Ok(ResolvedConfig {
            io: self.io.clone(),
            gc: self.gc.clone(),
            levels,
            adaptive,
            checkpoint: self.checkpoint.clone(),
            num_lpns: num_lpns as u32,
            seed: self.seed,
        })
    }
}

/// A device profile and an engine configuration in one file, as used by the
/// benchmark CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProfile {
    pub device: DeviceProfile,
    #[serde(default)]
    pub engine: EngineConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let g = FlashGeometry::desk_8bank();
        let r = EngineConfig::default().resolve(&g).unwrap();
        assert_eq!(r.io.num_queues, 64);
        assert_eq!(r.io.num_buffers, 256);
        assert_eq!(r.levels.panic_threshold(), 4);
        assert_eq!(r.num_lpns, (g.total_pages() * 3 / 4) as u32);
        assert_eq!(r.adaptive.permitted(64, 8), 1);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let mut c = EngineConfig::default();
        c.gc.policy = GcPolicy::Adaptive;
        c.io.num_queues = 8;
        let back = EngineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let partial = EngineConfig::from_toml("[io]\nnum_queues = 4\n[gc]\npolicy = \"npgc\"\n").unwrap();
        assert_eq!(partial.io.num_queues, 4);
        assert_eq!(partial.io.num_buffers, 256);
        assert_eq!(partial.gc.policy, GcPolicy::Npgc);
    }

    #[test]
    fn rejects_inconsistent_values() {
        let g = FlashGeometry::desk_8bank();
        let mut c = EngineConfig::default();
        c.io.num_buffers = 0;
        assert!(c.resolve(&g).is_err());
        let mut c = EngineConfig::default();
        c.io.buffer_size = Some(1234);
        assert!(c.resolve(&g).is_err());
        let mut c = EngineConfig::default();
        c.checkpoint.window_k = 40;
        assert!(c.resolve(&g).is_err());
        let mut c = EngineConfig::default();
        c.overprovision = 1.0;
        assert!(c.resolve(&g).is_err());
    }
}
