use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When garbage collection runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GcPolicy {
    /// Inline, in the write path, on the bank about to be written.
    Npgc,
    /// Background collector threads running next to the IO workers.
    Pllgc,
    /// Background collectors throttled by IO activity, with a master thread.
    Adaptive,
}

impl GcPolicy {
    pub fn uses_workers(self) -> bool {
        !matches!(self, GcPolicy::Npgc)
    }

    pub fn name(self) -> &'static str {
        match self {
            GcPolicy::Npgc => "npgc",
            GcPolicy::Pllgc => "pllgc",
            GcPolicy::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for GcPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "npgc" => Ok(GcPolicy::Npgc),
            "pllgc" => Ok(GcPolicy::Pllgc),
            "adaptive" | "pllgc-adaptive" | "pllgc+adaptive" => Ok(GcPolicy::Adaptive),
            other => Err(Error::Config(format!("unknown GC policy {other}"))),
        }
    }
}

/// `[lo, hi]` active IO workers permits `gc_threads` collectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptiveRange {
    pub lo: usize,
    pub hi: usize,
    pub gc_threads: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptiveMap {
    pub ranges: Vec<AdaptiveRange>,
}

impl AdaptiveMap {
    /// Splits `0..=io_workers` into quarters. The busiest quarter permits one
    /// collector; each quieter quarter doubles it up to `max_gc`.
    ///
    /// For 64 workers and 8 collectors: 49..=64 -> 1, 33..=48 -> 2,
    /// 17..=32 -> 4, 0..=16 -> 8.
    pub fn default_for(io_workers: usize, max_gc: usize) -> Self {
        let q = io_workers;
        let bounds = [(0, q / 4), (q / 4 + 1, q / 2), (q / 2 + 1, 3 * q / 4), (3 * q / 4 + 1, q)];
        let threads = [max_gc, max_gc / 2, max_gc / 4, max_gc / 8];
        let ranges = bounds
            .iter()
            .zip(threads)
            .filter(|((lo, hi), _)| lo <= hi)
            .map(|(&(lo, hi), t)| AdaptiveRange { lo, hi, gc_threads: t.max(1) })
            .rev()
            .collect();
        AdaptiveMap { ranges }
    }

    /// Collectors permitted while `active_io` workers are busy. Counts outside
    /// every range permit all `max_gc`.
    pub fn permitted(&self, active_io: usize, max_gc: usize) -> usize {
        self.ranges
            .iter()
            .find(|r| r.lo <= active_io && active_io <= r.hi)
            .map_or(max_gc, |r| r.gc_threads)
            .clamp(1, max_gc.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranges.iter().any(|r| r.lo > r.hi || r.gc_threads == 0) {
            return Err(Error::Config("adaptive ranges need lo <= hi and at least one thread".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_for_64_workers() {
        let m = AdaptiveMap::default_for(64, 8);
        assert_eq!(m.permitted(64, 8), 1);
        assert_eq!(m.permitted(49, 8), 1);
        assert_eq!(m.permitted(48, 8), 2);
        assert_eq!(m.permitted(33, 8), 2);
        assert_eq!(m.permitted(32, 8), 4);
        assert_eq!(m.permitted(17, 8), 4);
        assert_eq!(m.permitted(16, 8), 8);
        assert_eq!(m.permitted(0, 8), 8);
    }

    #[test]
    fn never_below_one() {
        let m = AdaptiveMap::default_for(4, 1);
        for a in 0..=4 {
            assert_eq!(m.permitted(a, 1), 1);
        }
        let m = AdaptiveMap::default_for(1, 8);
        assert_eq!(m.permitted(1, 8), 1);
        assert_eq!(m.permitted(0, 8), 8);
    }

    #[test]
    fn parses_policy_names() {
        assert_eq!("NPGC".parse::<GcPolicy>().unwrap(), GcPolicy::Npgc);
        assert_eq!("pllgc+adaptive".parse::<GcPolicy>().unwrap(), GcPolicy::Adaptive);
        assert!("lazy".parse::<GcPolicy>().is_err());
    }
}
