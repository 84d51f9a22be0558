use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use parftl::config::{EngineConfig, RunProfile};
use parftl::gc::GcPolicy;
use parftl::sim_flash::SimFlashDevice;
use parftl::Error;
use parftl_bench::aging::AgingSpec;
use parftl_bench::presets::{preset, Scale};
use parftl_bench::report::{emit_report, RunReport};
use parftl_bench::runner::{compare_policies, init_scan, prepare_device, queue_scaling, run_workload};
use parftl_bench::workload::WorkloadSpec;

#[derive(Parser)]
#[command(name = "parftl-bench", about = "Desk-scale experiments on the parftl flash translation layer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one workload file against a card.
    Run(RunArgs),
    /// Run a named experiment over several seeds.
    Preset(PresetArgs),
    /// Age a fresh card and save its image.
    InjectAging(AgingArgs),
    /// Re-emit the CSV and summary files of a saved JSON report.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Seed of the scheduler, the workload and aging.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use OS threads instead of the deterministic scheduler.
    #[arg(long)]
    threaded: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Device profile and engine settings (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Workload description (TOML).
    #[arg(long)]
    workload: PathBuf,
    /// Start from a saved card image instead of a fresh card.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Aging applied to a fresh card before the run (TOML).
    #[arg(long)]
    aging: Option<PathBuf>,
    #[arg(long)]
    policy: Option<GcPolicy>,
    #[arg(long)]
    queues: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PresetArgs {
    /// queue-scaling, npgc-vs-pllgc, adaptive-vs-pllgc or init-scan.
    name: String,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 64)]
    size_divisor: u64,
    #[arg(long, default_value_t = 100)]
    think_divisor: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AgingArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    aging: PathBuf,
    /// Where to save the aged card.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON report written by `run` or `preset`.
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(report: &RunReport, out: &Path) -> anyhow::Result<()> {
    emit_report(report, out).with_context(|| format!("writing reports to {}", out.display()))?;
    print!("{}", report.summary());
    println!();
    Ok(())
}

fn cmd_run(a: RunArgs) -> anyhow::Result<()> {
    let profile: RunProfile = read_toml(&a.config)?;
    let mut workload: WorkloadSpec = read_toml(&a.workload)?;
    workload.seed = a.common.seed;
    let mut engine = profile.engine.clone();
    engine.seed = a.common.seed;
    engine.deterministic = !a.common.threaded;
    if let Some(p) = a.policy {
        engine.gc.policy = p;
    }
    if let Some(q) = a.queues {
        engine.io.num_queues = q;
    }
    let dev = match (&a.image, &a.aging) {
        (Some(_), Some(_)) => bail!("--image and --aging are exclusive"),
        (Some(img), None) => Arc::new(SimFlashDevice::load_image(img)?),
        (None, aging) => {
            let spec: Option<AgingSpec> = aging.as_deref().map(read_toml).transpose()?;
            prepare_device(&profile.device, &engine, spec.as_ref())?.0
        }
    };
    let label = format!("run-{}-seed{}", engine.gc.policy.name(), a.common.seed);
    let report = run_workload(dev, &engine, &workload, &label, 2000.0)?;
    emit(&report, &a.common.out)
}

fn cmd_preset(a: PresetArgs) -> anyhow::Result<()> {
    let scale = Scale { size_divisor: a.size_divisor, think_divisor: a.think_divisor };
    let p = preset(&a.name, a.common.seed, &scale)?;
    let seeds = a.common.seed..a.common.seed + a.seeds;
    match a.name.as_str() {
        "queue-scaling" => {
            for (q, r) in queue_scaling(&p, a.common.seed, a.common.threaded)? {
                println!("queues={q:<3} throughput_mb_s={:.3} elapsed_s={:.6}", r.throughput_mb_s(), r.elapsed_s);
                emit_report(&r, &a.common.out)?;
            }
        }
        "init-scan" => {
            for seed in seeds {
                let r = init_scan(&p, seed)?;
                println!("{}", serde_json::to_string(&r)?);
                if r.load_reads > r.load_bound || !r.contents_equal {
                    return Err(Error::Audit(format!("checkpoint load out of bounds or inconsistent: {r:?}")).into());
                }
            }
        }
        _ => {
            for seed in seeds {
                for r in compare_policies(&p, seed, a.common.threaded)? {
                    emit(&r, &a.common.out)?;
                }
            }
        }
    }
    Ok(())
}

fn cmd_inject(a: AgingArgs) -> anyhow::Result<()> {
    let profile: RunProfile = read_toml(&a.config)?;
    let mut spec: AgingSpec = read_toml(&a.aging)?;
    spec.seed = a.seed;
    let engine = EngineConfig { seed: a.seed, ..profile.engine.clone() };
    let (dev, report) = prepare_device(&profile.device, &engine, Some(&spec))?;
    dev.save_image(&a.image)?;
    let report = report.expect("aging ran");
    println!("free blocks per bank: {:?}", report.free_per_bank);
    println!("mapped logical pages: {}", report.mapped_lpns);
    Ok(())
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report: RunReport = serde_json::from_str(&text)?;
    emit(&report, &a.out)
}

fn main() -> ExitCode {
    env_logger::init();
    let res = match Cli::parse().cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Preset(a) => cmd_preset(a),
        Cmd::InjectAging(a) => cmd_inject(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Audit(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
