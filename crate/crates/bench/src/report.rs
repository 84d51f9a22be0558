use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use parftl::stats::EngineStats;

use crate::workload::LatencySample;

pub const LATENCY_HEADER: &str = "request_id,client,bytes,latency_us";
pub const THREAD_HEADER: &str = "client,avg_latency_us,normalized";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub policy: String,
    pub seed: u64,
    pub samples: Vec<LatencySample>,
    pub elapsed_s: f64,
    pub blocks_collected: u64,
    pub write_amplification: f64,
    pub bytes_acknowledged: u64,
    pub errors: u64,
    /// Latency boundary of the threshold count, in microseconds.
    pub threshold_us: f64,
    pub over_threshold: u64,
    pub per_thread_avg_us: Vec<f64>,
    pub stats: EngineStats,
}

impl RunReport {
    /// Fills the derived fields from the samples.
    pub fn finish(&mut self, clients: usize) {
        self.over_threshold = self.samples.iter().filter(|s| s.latency_us > self.threshold_us).count() as u64;
        let mut sum = vec![0.0; clients];
        let mut n = vec![0u64; clients];
        for s in &self.samples {
            sum[s.client] += s.latency_us;
            n[s.client] += 1;
        }
        self.per_thread_avg_us =
            sum.iter().zip(&n).filter(|(_, &n)| n > 0).map(|(s, &n)| s / n as f64).collect();
    }

    pub fn throughput_mb_s(&self) -> f64 {
        if self.elapsed_s == 0.0 {
            return 0.0;
        }
        self.bytes_acknowledged as f64 / 1e6 / self.elapsed_s
    }

    pub fn max_normalized_latency(&self) -> f64 {
        normalize(&self.per_thread_avg_us).into_iter().fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        s += &format!("run                   {}\n", self.label);
        s += &format!("policy                {}\n", self.policy);
        s += &format!("seed                  {}\n", self.seed);
        s += &format!("elapsed_s             {:.6}\n", self.elapsed_s);
        s += &format!("requests              {}\n", self.samples.len());
        s += &format!("bytes_acknowledged    {}\n", self.bytes_acknowledged);
        s += &format!("errors                {}\n", self.errors);
        s += &format!("blocks_collected      {}\n", self.blocks_collected);
        s += &format!("write_amplification   {:.4}\n", self.write_amplification);
        s += &format!("over_{}us            {}\n", self.threshold_us, self.over_threshold);
        s += &format!("max_normalized_avg    {:.4}\n", self.max_normalized_latency());
        s
    }
}

/// Divides by the smallest value, so the minimum maps to exactly 1.
pub fn normalize(avgs: &[f64]) -> Vec<f64> {
    let min = avgs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return avgs.iter().map(|_| 1.0).collect();
    }
    avgs.iter().map(|a| a / min).collect()
}

pub fn write_latency_csv(samples: &[LatencySample], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{LATENCY_HEADER}")?;
    for s in samples {
        writeln!(out, "{},{},{},{:.3}", s.request_id, s.client, s.bytes, s.latency_us)?;
    }
    Ok(())
}

pub fn write_thread_csv(avgs: &[f64], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{THREAD_HEADER}")?;
    for (i, (a, n)) in avgs.iter().zip(normalize(avgs)).enumerate() {
        writeln!(out, "{i},{a:.3},{n:.6}")?;
    }
    Ok(())
}

/// Writes `<label>.latency.csv`, `<label>.threads.csv`, `<label>.summary.txt`
/// and `<label>.json` under `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let base = dir.join(&report.label);
    let paths = ["latency.csv", "threads.csv", "summary.txt", "json"].map(|ext| base.with_extension(ext));
    write_latency_csv(&report.samples, fs::File::create(&paths[0])?)?;
    write_thread_csv(&report.per_thread_avg_us, fs::File::create(&paths[1])?)?;
    fs::write(&paths[2], report.summary())?;
    fs::write(&paths[3], serde_json::to_string_pretty(report).map_err(std::io::Error::other)?)?;
    Ok(paths.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_divides_by_minimum() {
        assert_eq!(normalize(&[100.0, 150.0, 200.0]), vec![1.0, 1.5, 2.0]);
        assert_eq!(normalize(&[]), Vec::<f64>::new());
    }

    #[test]
    fn empty_report_writes_headers_only() {
        let mut buf = Vec::new();
        write_latency_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{LATENCY_HEADER}\n"));
        let mut buf = Vec::new();
        write_thread_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{THREAD_HEADER}\n"));
    }

    #[test]
    fn derived_fields() {
        let sample = |client, latency_us| LatencySample {
            request_id: 0,
            client,
            bytes: 4096,
            latency_us,
            submitted_us: 0.0,
            ok: true,
        };
        let mut r = RunReport {
            label: "t".into(),
            policy: "npgc".into(),
            seed: 0,
            samples: vec![sample(0, 100.0), sample(0, 3000.0), sample(1, 200.0)],
            elapsed_s: 1.0,
            blocks_collected: 0,
            write_amplification: 1.0,
            bytes_acknowledged: 3 * 4096,
            errors: 0,
            threshold_us: 2000.0,
            over_threshold: 0,
            per_thread_avg_us: vec![],
            stats: EngineStats::default(),
        };
        r.finish(2);
        assert_eq!(r.over_threshold, 1);
        assert_eq!(r.per_thread_avg_us, vec![1550.0, 200.0]);
        assert_eq!(r.max_normalized_latency(), 7.75);
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&r, dir.path()).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
    }
}
