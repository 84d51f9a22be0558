use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim_flash::FlashGeometry;

/// One GC level: active when a bank has at most `free_blocks` free blocks;
/// victims may then hold at most `valid_pages` valid pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcLevel {
    pub free_blocks: u32,
    pub valid_pages: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcLevelTable {
    pub levels: Vec<GcLevel>,
}

impl GcLevelTable {
    /// Free thresholds at 25%, 12.5% and 6.25% of the blocks of a bank with
    /// valid-page limits of 0, 25% and 50% of a block.
    pub fn default_for(g: &FlashGeometry) -> Self {
        let bpb = g.blocks_per_bank as f64;
        let ppb = g.pages_per_block;
        let mut free = [(bpb * 0.25).round() as i64, (bpb * 0.125).round() as i64, (bpb * 0.0625).round() as i64];
        for i in 1..free.len() {
            free[i] = free[i].min(free[i - 1] - 1).max(0);
        }
        GcLevelTable {
            levels: vec![
                GcLevel { free_blocks: free[0] as u32, valid_pages: 0 },
                GcLevel { free_blocks: free[1] as u32, valid_pages: ppb / 4 },
                GcLevel { free_blocks: free[2] as u32, valid_pages: ppb / 2 },
            ],
        }
    }

    pub fn validate(&self, g: &FlashGeometry) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.levels.is_empty() {
            return err("at least one GC level is required".into());
        }
        if self.levels[0].valid_pages != 0 {
            return err("the first GC level must only take blocks without valid pages".into());
        }
        for w in self.levels.windows(2) {
            if w[1].free_blocks >= w[0].free_blocks {
                return err("GC free-block thresholds must strictly decrease".into());
            }
            if w[1].valid_pages < w[0].valid_pages {
                return err("GC valid-page thresholds must not decrease".into());
            }
        }
        if self.levels[0].free_blocks >= g.blocks_per_bank {
            return err("GC free-block threshold must be below the blocks per bank".into());
        }
        if self.levels.iter().any(|l| l.valid_pages >= g.pages_per_block) {
            return err("GC valid-page threshold must be below the pages per block".into());
        }
        Ok(())
    }

    /// Highest level whose free-block threshold a bank with `free` free
    /// blocks breaches.
    pub fn current_level(&self, free: u32) -> Option<usize> {
        self.levels.iter().rposition(|l| free <= l.free_blocks)
    }

    /// Free-block count below which a bank is in danger of running dry.
    pub fn panic_threshold(&self) -> u32 {
        self.levels.last().map_or(0, |l| l.free_blocks)
    }

    /// Free blocks a bank needs to leave every level.
    pub fn exit_threshold(&self) -> u32 {
        self.levels[0].free_blocks + 1
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_for_64_blocks() {
        let t = GcLevelTable::default_for(&FlashGeometry::desk_8bank());
        assert_eq!(
            t.levels,
            vec![
                GcLevel { free_blocks: 16, valid_pages: 0 },
                GcLevel { free_blocks: 8, valid_pages: 16 },
                GcLevel { free_blocks: 4, valid_pages: 32 },
            ]
        );
        t.validate(&FlashGeometry::desk_8bank()).unwrap();
        assert_eq!(t.panic_threshold(), 4);
    }

    #[test]
    fn level_boundaries() {
        let t = GcLevelTable::default_for(&FlashGeometry::desk_8bank());
        assert_eq!(t.current_level(17), None);
        assert_eq!(t.current_level(16), Some(0));
        assert_eq!(t.current_level(9), Some(0));
        assert_eq!(t.current_level(8), Some(1));
        assert_eq!(t.current_level(4), Some(2));
        assert_eq!(t.current_level(1), Some(2));
    }

    #[test]
    fn small_banks_stay_strictly_decreasing() {
        let g = FlashGeometry::tiny();
        let t = GcLevelTable::default_for(&g);
        t.validate(&g).unwrap();
        assert_eq!(t.levels.iter().map(|l| l.free_blocks).collect::<Vec<_>>(), vec![2, 1, 0]);
    }

    #[test]
    fn rejects_malformed_tables() {
        let g = FlashGeometry::desk_8bank();
        let mut t = GcLevelTable::default_for(&g);
        t.levels[1].free_blocks = 20;
        assert!(t.validate(&g).is_err());
        let mut t = GcLevelTable::default_for(&g);
        t.levels[0].valid_pages = 1;
        assert!(t.validate(&g).is_err());
        let mut t = GcLevelTable::default_for(&g);
        t.levels[2].valid_pages = 3;
        assert!(t.validate(&g).is_err());
    }
}
