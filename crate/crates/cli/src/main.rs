use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use msjlab::bounds::evaluate_bounds;
use msjlab::experiment::{
    run_sweep, run_verify, write_bounds_csv, write_sweep_csv, ParamSource, RunMetrics, SweepSpec, VerifySuite,
};
use msjlab::model::{derive_params, ParamSet, SystemConfig};
use msjlab::policies::PolicyKind;
use msjlab::sim::{
    build_job_stream, check_infinite_server_dominance, check_sandwich, sandwich_systems, simulate,
    simulate_coupled, SimOptions,
};
use msjlab::stats::{mean_waiting_time, DEFAULT_BATCHES, DEFAULT_CONFIDENCE};
use serde_json::json;

/// Largest server count accepted without `--large`.
const DESK_MAX_N: u32 = 4096;

#[derive(Parser)]
#[command(name = "msjlab", version, about = "Multiserver-job queueing simulator and bound calculator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy on one configuration.
    Run(RunArgs),
    /// Sweep server counts, policies and seeds; write CSV tables.
    Sweep(SweepArgs),
    /// Print the closed-form bounds for a configuration as JSON.
    Bounds(BoundsArgs),
    /// Run a named invariant suite (coupling, oracle, tails, drift or all).
    Verify(VerifyArgs),
    /// Run the coupled bounding systems and report the pathwise checks.
    Couple(CoupleArgs),
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Built-in parameter family.
    #[arg(long, env = "MSJLAB_PARAM_SET", default_value = "one", conflicts_with = "config")]
    param_set: ParamSet,
    /// JSON file with `{"n": .., "types": [{"lambda": .., "mu": .., "l": ..}]}`.
    #[arg(long, env = "MSJLAB_CONFIG")]
    config: Option<PathBuf>,
    /// Allow server counts above 4096.
    #[arg(long, env = "MSJLAB_LARGE")]
    large: bool,
}

impl SourceArgs {
    fn source(&self) -> Result<ParamSource> {
        match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let config: SystemConfig =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                Ok(ParamSource::Config(config))
            }
            None => Ok(ParamSource::Set(self.param_set)),
        }
    }

    /// The configuration at `n`, or at the file's own `n` when none is given.
    fn resolve(&self, n: Option<u32>) -> Result<SystemConfig> {
        let source = self.source()?;
        let n = match (&source, n) {
            (_, Some(n)) => n,
            (ParamSource::Config(c), None) => c.n(),
            (ParamSource::Set(_), None) => 256,
        };
        self.check_n(n)?;
        Ok(source.config_for(n)?)
    }

    fn check_n(&self, n: u32) -> Result<()> {
        if n > DESK_MAX_N && !self.large {
            bail!("n = {n} is above {DESK_MAX_N}; pass --large to run it");
        }
        Ok(())
    }
}

#[derive(Args, Clone)]
struct SimArgs {
    #[arg(long, env = "MSJLAB_SEED", default_value_t = 1)]
    seed: u64,
    /// Jobs per run.
    #[arg(long, env = "MSJLAB_JOBS", default_value_t = 2_000_000)]
    jobs: usize,
    /// Fraction of simulated time discarded before measuring.
    #[arg(long, env = "MSJLAB_WARMUP", default_value_t = 0.1)]
    warmup: f64,
    #[arg(long, env = "MSJLAB_BATCHES", default_value_t = DEFAULT_BATCHES)]
    batches: usize,
    /// Work-conservation audit threshold (default: l_max).
    #[arg(long, env = "MSJLAB_DELTA_PRIME")]
    delta_prime: Option<f64>,
}

impl SimArgs {
    fn options(&self) -> SimOptions {
        SimOptions {
            warmup: self.warmup,
            batches: self.batches,
            audit_delta_prime: self.delta_prime,
            ..SimOptions::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, env = "MSJLAB_N")]
    n: Option<u32>,
    #[arg(long, env = "MSJLAB_POLICY", default_value = "fcfs")]
    policy: PolicyKind,
    /// Write every event as CSV (`t,kind,type,x1..xI,z1..zI`).
    #[arg(long, env = "MSJLAB_DUMP_TRAJECTORY")]
    dump_trajectory: Option<PathBuf>,
    /// Write the JSON summary here instead of stdout.
    #[arg(long, env = "MSJLAB_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Comma-separated server counts.
    #[arg(long, env = "MSJLAB_N", value_delimiter = ',', default_value = "64,256,1024,4096")]
    n: Vec<u32>,
    #[arg(long, env = "MSJLAB_POLICY", value_delimiter = ',', default_value = "fcfs,snf,snf-np")]
    policy: Vec<PolicyKind>,
    /// Comma-separated seeds; overrides --seed.
    #[arg(long, env = "MSJLAB_SEEDS", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Worker threads.
    #[arg(long, env = "MSJLAB_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Output CSV path; bounds go to `<stem>.bounds.csv`, metadata to `<stem>.meta.json`.
    #[arg(long, env = "MSJLAB_OUT", default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, env = "MSJLAB_N")]
    n: Option<u32>,
    /// Audit threshold used for the workload upper bound (default: l_max).
    #[arg(long, env = "MSJLAB_DELTA_PRIME")]
    delta_prime: Option<f64>,
    #[arg(long, env = "MSJLAB_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// coupling, oracle, tails, drift or all.
    suite: String,
    /// Multiplier on the built-in job counts.
    #[arg(long, env = "MSJLAB_VERIFY_SCALE", default_value_t = 1.0)]
    scale: f64,
}

#[derive(Args)]
struct CoupleArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, env = "MSJLAB_N")]
    n: Option<u32>,
    #[arg(long, env = "MSJLAB_OUT")]
    out: Option<PathBuf>,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = args.source.resolve(args.n)?;
    let stream = build_job_stream(args.sim.seed, args.sim.jobs, &config)?;
    let opts = SimOptions { record_trajectory: args.dump_trajectory.is_some(), ..args.sim.options() };
    let result = simulate(args.policy, &config, &stream, &opts)?;
    if let (Some(path), Some(traj)) = (&args.dump_trajectory, &result.trajectory) {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        traj.write_csv(BufWriter::new(file))?;
    }
    let metrics = RunMetrics::from_result(&result, args.sim.batches)?;
    let waits = mean_waiting_time(&result, args.sim.batches)?;
    let params = derive_params(&config);
    write_json(
        args.out.as_deref(),
        &json!({
            "policy": args.policy,
            "config": config,
            "delta": params.delta,
            "sigma2": params.sigma2,
            "seed": args.sim.seed,
            "jobs": args.sim.jobs,
            "warmup": args.sim.warmup,
            "batches": args.sim.batches,
            "confidence": DEFAULT_CONFIDENCE,
            "measured_jobs": waits.samples,
            "metrics": metrics,
        }),
    )
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    for &n in &args.n {
        args.source.check_n(n)?;
    }
    let seeds = if args.seeds.is_empty() { vec![args.sim.seed] } else { args.seeds.clone() };
    let spec = SweepSpec {
        source: args.source.source()?,
        n_list: args.n.clone(),
        policies: args.policy.clone(),
        seeds,
        jobs_per_run: args.sim.jobs,
        warmup: args.sim.warmup,
        batches: args.sim.batches,
        delta_prime: args.sim.delta_prime,
    };
    let output = run_sweep(&spec, args.workers)?;
    write_sweep_csv(&output, BufWriter::new(File::create(&args.out)?))?;
    let bounds_path = sibling(&args.out, ".bounds.csv");
    write_bounds_csv(&output, BufWriter::new(File::create(&bounds_path)?))?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write_json(
        Some(&sibling(&args.out, ".meta.json")),
        &json!({
            "created_unix": created,
            "version": env!("CARGO_PKG_VERSION"),
            "spec": spec,
            "confidence": DEFAULT_CONFIDENCE,
            "interval": "Student-t on batch means, batches - 1 degrees of freedom",
            "per_job_batches": "equal job counts, leading remainder dropped",
            "time_batches": "equal simulated time over [warmup * A_K, A_K]",
        }),
    )?;
    let failed = output.rows.iter().filter(|r| r.outcome.is_err()).count();
    eprintln!(
        "wrote {} rows to {} ({} failed) and bounds to {}",
        output.rows.len(),
        args.out.display(),
        failed,
        bounds_path.display()
    );
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let config = args.source.resolve(args.n)?;
    let dp = args.delta_prime.unwrap_or(f64::from(config.l_max()));
    let report = evaluate_bounds(&config, dp);
    write_json(args.out.as_deref(), &serde_json::to_value(report)?)
}

fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let suites = if args.suite.eq_ignore_ascii_case("all") {
        VerifySuite::ALL.to_vec()
    } else {
        vec![args.suite.parse::<VerifySuite>().map_err(anyhow::Error::msg)?]
    };
    let mut all_passed = true;
    for suite in suites {
        let report = run_verify(suite, args.scale)?;
        for c in &report.checks {
            println!("{:<5} {:<10} {:<36} {}", if c.passed { "PASS" } else { "FAIL" }, suite, c.name, c.detail);
        }
        all_passed &= report.passed();
    }
    Ok(all_passed)
}

fn cmd_couple(args: CoupleArgs) -> Result<bool> {
    let config = args.source.resolve(args.n)?;
    let stream = build_job_stream(args.sim.seed, args.sim.jobs, &config)?;
    let opts = args.sim.options();
    let systems = sandwich_systems(&config);
    let results = simulate_coupled(&systems, &config, &stream, &opts)?;
    let infinite = simulate(PolicyKind::InfiniteServer, &config, &stream, &opts)?;
    let sandwich = check_sandwich(&results[0], &results[1], &results[2])?;
    let dominance = check_infinite_server_dominance(&infinite, &results[1])?;
    let mut systems_json = Vec::new();
    for (spec, r) in systems.iter().zip(&results) {
        let w = mean_waiting_time(r, args.sim.batches)?;
        systems_json.push(json!({
            "policy": spec.policy,
            "servers": spec.servers,
            "mean_wait": w.overall.mean,
            "mean_wait_hw": w.overall.half_width,
        }));
    }
    write_json(
        args.out.as_deref(),
        &json!({
            "n": config.n(),
            "seed": args.sim.seed,
            "jobs": args.sim.jobs,
            "systems": systems_json,
            "sandwich_holds": sandwich,
            "infinite_server_dominance_holds": dominance,
        }),
    )?;
    Ok(sandwich && dominance)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a).map(|()| true),
        Command::Sweep(a) => cmd_sweep(a).map(|()| true),
        Command::Bounds(a) => cmd_bounds(a).map(|()| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Couple(a) => cmd_couple(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
