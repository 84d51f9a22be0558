//! Synthetic aging: fills free blocks so that free-block counts per bank and
//! valid pages per block follow chosen normal distributions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use parftl::spare::LPN_NONE;
use parftl::time::SimTime;
use parftl::{Error, Ftl, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgingSpec {
    /// Free blocks left per bank.
    pub free_mean: f64,
    pub free_spread: f64,
    /// Valid pages per filled block, as a fraction of the block.
    pub valid_mean: f64,
    pub valid_spread: f64,
    /// Logical pages below this one are left unmapped, e.g. for the region
    /// a workload will write.
    #[serde(default)]
    pub skip_lpns_below: u32,
    pub seed: u64,
}

impl AgingSpec {
    /// Leaves every block free.
    pub fn none(blocks_per_bank: u32) -> Self {
        AgingSpec {
            free_mean: blocks_per_bank as f64,
            free_spread: 0.0,
            valid_mean: 0.0,
            valid_spread: 0.0,
            skip_lpns_below: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgingReport {
    pub free_per_bank: Vec<u32>,
    pub valid_per_block: Vec<u32>,
    pub mapped_lpns: u64,
}

/// Logical page content written by aging.
pub fn aged_page(lpn: u32, page_size: u32) -> Vec<u8> {
    let x = lpn.wrapping_mul(0x9e37_79b9) | 1;
    (0..page_size).map(|i| (x.wrapping_mul(i + 1) >> 13) as u8).collect()
}

fn normal(mean: f64, spread: f64) -> Result<Normal<f64>> {
    Normal::new(mean, spread.max(0.0)).map_err(|e| Error::Config(format!("aging distribution: {e}")))
}

/// Fills free blocks of a quiescent engine as `spec` asks. Only unmapped
/// logical pages are used. Fails when the distribution needs more logical
/// pages than are available.
pub fn inject_aging(ftl: &Ftl, spec: &AgingSpec) -> Result<AgingReport> {
    let g = ftl.geometry().clone();
    let ppb = g.pages_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let free_dist = normal(spec.free_mean, spec.free_spread)?;
    let valid_dist = normal(spec.valid_mean * ppb as f64, spec.valid_spread * ppb as f64)?;
    let min_free = ftl.config().levels.panic_threshold() + 1;

    let mut plan = Vec::new();
    for bank in 0..g.num_banks() {
        let free_now = ftl.state.bank(bank).free_blocks();
        let target = (free_dist.sample(&mut rng).round().max(0.0) as u32).clamp(min_free.min(free_now), free_now);
        for _ in 0..free_now - target {
            let v = valid_dist.sample(&mut rng).round().clamp(0.0, ppb as f64) as u32;
            plan.push((bank, v));
        }
    }
    let needed: u64 = plan.iter().map(|&(_, v)| v as u64).sum();
    let mut pool: Vec<u32> = (spec.skip_lpns_below..ftl.state.num_lpns())
        .filter(|&l| ftl.state.map.lookup(parftl::sim_flash::Lpn(l)).is_none())
        .collect();
    if needed > pool.len() as u64 {
        return Err(Error::Config(format!(
            "aging needs {needed} valid pages but only {} logical pages are free",
            pool.len()
        )));
    }
    pool.shuffle(&mut rng);
    let mut t = SimTime::ZERO;
    let mut valid_per_block = Vec::with_capacity(plan.len());
    for (bank, v) in plan {
        let mut lpns: Vec<u32> = pool.drain(pool.len() - v as usize..).collect();
        lpns.resize(ppb as usize, LPN_NONE);
        lpns.shuffle(&mut rng);
        let (_, done) = ftl.inject_block(bank, &lpns, |l| aged_page(l, g.page_size), t)?;
        t = t.max(done);
        valid_per_block.push(v);
    }
    ftl.audit().map_err(Error::Audit)?;
    ftl.device().reset_clocks();
    ftl.reset_counters();
    Ok(AgingReport {
        free_per_bank: (0..g.num_banks()).map(|b| ftl.state.bank(b).free_blocks()).collect(),
        valid_per_block,
        mapped_lpns: needed,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use parftl::config::EngineConfig;
    use parftl::sim_flash::{DeviceProfile, FlashGeometry, Lpn};

    use super::*;

    fn ftl(g: FlashGeometry) -> Ftl {
        let dev = Arc::new(DeviceProfile::new(g.clone()).create_device().unwrap());
        Ftl::new(dev, EngineConfig::default().resolve(&g).unwrap())
    }

    #[test]
    fn desk_aging_matches_distribution_and_audits() {
        let f = ftl(FlashGeometry::desk_8bank());
        let spec = AgingSpec {
            free_mean: 20.0,
            free_spread: 3.0,
            valid_mean: 0.5,
            valid_spread: 0.15,
            skip_lpns_below: 4096,
            seed: 3,
        };
        let r = inject_aging(&f, &spec).unwrap();
        let mean_free = r.free_per_bank.iter().sum::<u32>() as f64 / 8.0;
        assert!((mean_free - 20.0).abs() < 3.0, "{mean_free}");
        let mean_valid = r.valid_per_block.iter().sum::<u32>() as f64 / r.valid_per_block.len() as f64;
        assert!((mean_valid - 32.0).abs() < 3.0, "{mean_valid}");
        for l in 0..4096 {
            assert!(f.state.map.lookup(Lpn(l)).is_none());
        }
        // every synthesized page reads back
        let mut checked = 0;
        for l in 4096..f.state.num_lpns() {
            if f.state.map.lookup(Lpn(l)).is_some() {
                let (got, _) = f.read_sector(l as u64 * 8 + 3, SimTime::ZERO).unwrap();
                assert_eq!(got, aged_page(l, 4096)[3 * 512..4 * 512]);
                checked += 1;
            }
        }
        assert_eq!(checked, r.mapped_lpns);
    }

    #[test]
    fn all_free_spec_is_fresh_state() {
        let f = ftl(FlashGeometry::tiny());
        let r = inject_aging(&f, &AgingSpec::none(8)).unwrap();
        assert_eq!(r.mapped_lpns, 0);
        assert_eq!(r.free_per_bank, vec![8, 8]);
    }

    #[test]
    fn infeasible_distribution_is_rejected() {
        let f = ftl(FlashGeometry::tiny());
        let spec = AgingSpec { free_mean: 0.0, free_spread: 0.0, valid_mean: 1.0, valid_spread: 0.0, skip_lpns_below: 0, seed: 1 };
        assert!(inject_aging(&f, &spec).is_err());
    }
}
