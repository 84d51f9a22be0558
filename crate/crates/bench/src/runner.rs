use std::sync::Arc;

use serde::{Deserialize, Serialize};

use parftl::config::EngineConfig;
use parftl::runtime::Client;
use parftl::sim_flash::{DeviceProfile, SimFlashDevice};
use parftl::{Engine, Error, Ftl, Result, StartPath};

use crate::aging::{inject_aging, AgingReport, AgingSpec};
use crate::presets::Preset;
use crate::report::RunReport;
use crate::workload::{WorkloadClient, WorkloadSpec};

/// A fresh card, aged by `aging` if given and closed with a checkpoint.
pub fn prepare_device(
    profile: &DeviceProfile,
    engine: &EngineConfig,
    aging: Option<&AgingSpec>,
) -> Result<(Arc<SimFlashDevice>, Option<AgingReport>)> {
    let dev = Arc::new(profile.create_device()?);
    let Some(spec) = aging else { return Ok((dev, None)) };
    let cfg = EngineConfig { deterministic: true, ..engine.clone() };
    let e = Engine::start(&cfg, dev.clone())?;
    let report = inject_aging(e.ftl(), spec)?;
    e.shutdown(true)?;
    Ok((dev, Some(report)))
}

/// Runs `spec` on `dev` and reports latencies and counters. The run ends
/// once every client is done and the buffers are flushed. A failed audit
/// after the run is an error.
pub fn run_workload(
    dev: Arc<SimFlashDevice>,
    engine: &EngineConfig,
    spec: &WorkloadSpec,
    label: &str,
    threshold_us: f64,
) -> Result<RunReport> {
    let g = dev.geometry().clone();
    spec.validate(g.page_size).map_err(Error::Config)?;
    let e = Engine::start(engine, dev)?;
    e.ftl().reset_counters();
    let mut clients: Vec<WorkloadClient> =
        (0..spec.num_client_threads).map(|i| WorkloadClient::new(i, spec, g.page_size, g.read_unit)).collect();
    let mut refs: Vec<&mut dyn Client> = clients.iter_mut().map(|c| c as &mut dyn Client).collect();
    let summary = e.run_clients(&mut refs)?;
    e.flush()?;
    let end = e.now()?;
    e.audit()?;
    let stats = e.stats()?;
    e.shutdown(false)?;
    let mut samples: Vec<_> = clients.iter().flat_map(|c| c.samples.iter().copied()).collect();
    samples.sort_by(|a, b| a.submitted_us.total_cmp(&b.submitted_us).then(a.client.cmp(&b.client)));
    for (i, s) in samples.iter_mut().enumerate() {
        s.request_id = i as u64;
    }
    let mut report = RunReport {
        label: label.to_string(),
        policy: engine.gc.policy.name().to_string(),
        seed: engine.seed,
        samples,
        elapsed_s: end.since(summary.started) as f64 / 1e9,
        blocks_collected: stats.gc.blocks_collected,
        write_amplification: stats.write_amplification,
        bytes_acknowledged: clients.iter().map(|c| c.bytes_acknowledged).sum(),
        errors: clients.iter().map(|c| c.errors).sum(),
        threshold_us,
        over_threshold: 0,
        per_thread_avg_us: vec![],
        stats,
    };
    report.finish(spec.num_client_threads);
    Ok(report)
}

/// One seed of a policy comparison: the card is aged once and each policy
/// runs on its own copy.
pub fn compare_policies(preset: &Preset, seed: u64, threaded: bool) -> Result<Vec<RunReport>> {
    let mut p = preset.clone();
    p.engine.seed = seed;
    p.engine.deterministic = !threaded;
    p.workload.seed = seed;
    if let Some(a) = &mut p.aging {
        a.seed = seed;
    }
    let (dev, _) = prepare_device(&p.device, &p.engine, p.aging.as_ref())?;
    p.policies
        .iter()
        .map(|&policy| {
            let mut cfg = p.engine.clone();
            cfg.gc.policy = policy;
            let label = format!("{}-{}-seed{seed}", p.name, policy.name());
            run_workload(Arc::new(dev.fork()), &cfg, &p.workload, &label, p.threshold_us)
        })
        .collect()
}

/// Write throughput for each queue count of the preset's sweep.
pub fn queue_scaling(preset: &Preset, seed: u64, threaded: bool) -> Result<Vec<(usize, RunReport)>> {
    preset
        .queue_sweep
        .iter()
        .map(|&q| {
            let mut cfg = preset.engine.clone();
            cfg.io.num_queues = q;
            cfg.seed = seed;
            cfg.deterministic = !threaded;
            cfg.gc.adaptive = None;
            let dev = Arc::new(preset.device.create_device()?);
            let label = format!("{}-q{q}-seed{seed}", preset.name);
            run_workload(dev, &cfg, &preset.workload, &label, preset.threshold_us).map(|r| (q, r))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitScanReport {
    /// Page reads of a start that loads the checkpoint.
    pub load_reads: u64,
    /// Window probes plus chain pages: the most a load may read.
    pub load_bound: u64,
    pub chain_pages: u64,
    /// Page reads of a full recovery scan of the same image.
    pub scan_reads: u64,
    pub written_pages: u64,
    pub ratio: f64,
    pub contents_equal: bool,
}

/// Fills the card, shuts down cleanly, then compares the reads of a
/// checkpoint load with those of a full scan of a copy of the image.
pub fn init_scan(preset: &Preset, seed: u64) -> Result<InitScanReport> {
    let mut cfg = preset.engine.clone();
    cfg.seed = seed;
    cfg.deterministic = true;
    let mut spec = preset.workload.clone();
    spec.seed = seed;
    let dev = Arc::new(preset.device.create_device()?);
    let g = dev.geometry().clone();
    {
        let e = Engine::start(&cfg, dev.clone())?;
        let mut clients: Vec<WorkloadClient> =
            (0..spec.num_client_threads).map(|i| WorkloadClient::new(i, &spec, g.page_size, g.read_unit)).collect();
        let mut refs: Vec<&mut dyn Client> = clients.iter_mut().map(|c| c as &mut dyn Client).collect();
        e.run_clients(&mut refs)?;
        e.shutdown(true)?;
    }
    let written_pages = dev.stats().pages_written;
    let scan_dev = Arc::new(dev.fork());

    let e = Engine::start(&cfg, dev)?;
    let StartPath::Checkpoint(load) = e.start_report().path.clone() else {
        return Err(Error::Checkpoint("no checkpoint found after a clean shutdown".into()));
    };
    let load_reads = e.start_report().page_reads;
    let k = cfg.checkpoint.window_k as u64;
    let load_bound = 2 * k * g.num_banks() as u64 + load.chain_pages as u64;

    let scan_ftl = Ftl::new(scan_dev.clone(), cfg.resolve(&g)?);
    let before = scan_dev.stats().page_reads;
    scan_ftl.recovery_scan(parftl::time::SimTime::ZERO)?;
    let scan_reads = scan_dev.stats().page_reads - before;
    let contents_equal = e.ftl().state.tables().map == scan_ftl.state.tables().map;
    e.shutdown(false)?;
    Ok(InitScanReport {
        load_reads,
        load_bound,
        chain_pages: load.chain_pages as u64,
        scan_reads,
        written_pages,
        ratio: scan_reads as f64 / load_reads.max(1) as f64,
        contents_equal,
    })
}
