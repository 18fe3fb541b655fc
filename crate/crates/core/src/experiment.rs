//! Parameter sweeps and the named verification suites.
//!
//! A sweep cell is one `(n, seed)` pair: a single job stream is drawn and
//! every requested policy runs on it. Cells run on a rayon pool; rows are
//! sorted by `(n, policy, seed)` before output so the CSV does not depend on
//! scheduling order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{evaluate_bounds, Bound, BoundReport};
use crate::model::{make_param_set, ModelError, ParamSet, SystemConfig};
use crate::oracle::{ctmc_stationary, erlang_c, whole_machine_mm1, CtmcSpec, OracleError};
use crate::policies::PolicyKind;
use crate::sim::{
    build_job_stream, check_infinite_server_dominance, check_sandwich, sandwich_systems, simulate,
    simulate_coupled, JobOutcome, SimError, SimOptions, SimResult,
};
use crate::stats::{mean_waiting_time, queueing_probability, BatchMeansEstimate, StatsError, DEFAULT_BATCHES};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("sweep needs at least one {0}")]
    EmptyList(&'static str),
    #[error("{jobs} jobs per run is below 20 x {batches} batches")]
    TooFewJobs { jobs: usize, batches: usize },
    #[error("warm-up fraction must lie in [0, 1), got {0}")]
    BadWarmup(f64),
    #[error("need at least 2 batches, got {0}")]
    BadBatches(usize),
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where sweep configurations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSource {
    Set(ParamSet),
    /// A fixed set of job types; each `n` in the sweep replaces its server count.
    Config(SystemConfig),
}

impl ParamSource {
    pub fn config_for(&self, n: u32) -> Result<SystemConfig, ModelError> {
        match self {
            ParamSource::Set(set) => make_param_set(*set, n),
            ParamSource::Config(c) => c.with_servers(n),
        }
    }

    fn label(&self) -> String {
        match self {
            ParamSource::Set(set) => set.to_string(),
            ParamSource::Config(_) => "file".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub source: ParamSource,
    pub n_list: Vec<u32>,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    pub jobs_per_run: usize,
    pub warmup: f64,
    pub batches: usize,
    /// Audit threshold; `None` audits at `l_max`.
    pub delta_prime: Option<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_list.is_empty() {
            return Err(ExperimentError::EmptyList("server count"));
        }
        if self.policies.is_empty() {
            return Err(ExperimentError::EmptyList("policy"));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::EmptyList("seed"));
        }
        if self.batches < 2 {
            return Err(ExperimentError::BadBatches(self.batches));
        }
        if self.jobs_per_run < 20 * self.batches {
            return Err(ExperimentError::TooFewJobs { jobs: self.jobs_per_run, batches: self.batches });
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(ExperimentError::BadWarmup(self.warmup));
        }
        Ok(())
    }

    fn options(&self) -> SimOptions {
        SimOptions {
            warmup: self.warmup,
            batches: self.batches,
            audit_delta_prime: self.delta_prime,
            ..SimOptions::default()
        }
    }
}

/// Estimate summary with the per-batch values dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
}

impl From<&BatchMeansEstimate> for Interval {
    fn from(e: &BatchMeansEstimate) -> Self {
        Self { mean: e.mean, half_width: e.half_width }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mean_wait: Interval,
    /// `None` where a type had too few measured jobs.
    pub wait_per_type: Vec<Option<Interval>>,
    pub queueing_probability: Interval,
    pub workload: Interval,
    pub z_per_type: Vec<Interval>,
    pub audit_epochs: u64,
    pub audit_violations: u64,
    pub preemptions: u64,
    pub events: u64,
}

impl RunMetrics {
    pub fn from_result(result: &SimResult, batches: usize) -> Result<Self, StatsError> {
        let w = mean_waiting_time(result, batches)?;
        let audit = result.audit.as_ref();
        Ok(Self {
            mean_wait: (&w.overall).into(),
            wait_per_type: w.per_type.iter().map(|e| e.as_ref().map(Interval::from)).collect(),
            queueing_probability: (&queueing_probability(result)).into(),
            workload: (&result.time_averages.workload.estimate()).into(),
            z_per_type: result.time_averages.z.iter().map(|s| (&s.estimate()).into()).collect(),
            audit_epochs: audit.map_or(0, |a| a.epochs),
            audit_violations: audit.map_or(0, |a| a.violations),
            preemptions: result.preemptions,
            events: result.event_count,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u32,
    pub policy: PolicyKind,
    pub seed: u64,
    pub jobs: usize,
    pub outcome: Result<RunMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub source: String,
    pub rows: Vec<SweepRow>,
    /// One entry per `n`; `Err` when the config could not be built.
    pub bounds: Vec<(u32, Result<BoundReport, String>)>,
}

impl SweepOutput {
    pub fn row(&self, n: u32, policy: PolicyKind, seed: u64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n == n && r.policy == policy && r.seed == seed)
    }
}

fn run_cell(spec: &SweepSpec, n: u32, seed: u64) -> Vec<SweepRow> {
    let make_rows = |outcome: &dyn Fn(PolicyKind) -> Result<RunMetrics, String>| {
        spec.policies
            .iter()
            .map(|&policy| SweepRow { n, policy, seed, jobs: spec.jobs_per_run, outcome: outcome(policy) })
            .collect::<Vec<_>>()
    };
    let config = match spec.source.config_for(n) {
        Ok(c) => c,
        Err(e) => return make_rows(&|_| Err(e.to_string())),
    };
    let stream = match build_job_stream(seed, spec.jobs_per_run, &config) {
        Ok(s) => s,
        Err(e) => return make_rows(&|_| Err(e.to_string())),
    };
    let opts = spec.options();
    make_rows(&|policy| {
        let result = simulate(policy, &config, &stream, &opts).map_err(|e| e.to_string())?;
        RunMetrics::from_result(&result, spec.batches).map_err(|e| e.to_string())
    })
}

/// Run every `(n, policy, seed)` cell on a pool of `workers` threads.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepOutput, ExperimentError> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let cells: Vec<(u32, u64)> =
        spec.n_list.iter().flat_map(|&n| spec.seeds.iter().map(move |&s| (n, s))).collect();
    let mut rows: Vec<SweepRow> =
        pool.install(|| cells.par_iter().flat_map_iter(|&(n, seed)| run_cell(spec, n, seed)).collect());
    rows.sort_by_key(|r| (r.n, policy_rank(r.policy), r.seed));

    let mut ns = spec.n_list.clone();
    ns.sort_unstable();
    ns.dedup();
    let bounds = ns
        .into_iter()
        .map(|n| {
            let report = spec.source.config_for(n).map_err(|e| e.to_string()).map(|c| {
                let dp = spec.delta_prime.unwrap_or(f64::from(c.l_max()));
                evaluate_bounds(&c, dp)
            });
            (n, report)
        })
        .collect();
    Ok(SweepOutput { source: spec.source.label(), rows, bounds })
}

fn policy_rank(p: PolicyKind) -> usize {
    PolicyKind::ALL.iter().position(|&q| q == p).expect("listed")
}

/// Column order of the sweep CSV. Per-type fields hold `;`-joined values in
/// type order, with `NA` for absent entries.
pub const SWEEP_COLUMNS: [&str; 20] = [
    "source",
    "n",
    "policy",
    "seed",
    "jobs",
    "status",
    "mean_wait",
    "mean_wait_hw",
    "wait_per_type",
    "wait_per_type_hw",
    "queueing_prob",
    "queueing_prob_hw",
    "workload",
    "workload_hw",
    "z_per_type",
    "z_per_type_hw",
    "audit_epochs",
    "audit_violations",
    "preemptions",
    "events",
];

fn join<I: IntoIterator<Item = Option<f64>>>(values: I) -> String {
    values
        .into_iter()
        .map(|v| v.map_or_else(|| "NA".to_string(), |x| x.to_string()))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_sweep_csv<W: Write>(output: &SweepOutput, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for row in &output.rows {
        let head = [
            output.source.clone(),
            row.n.to_string(),
            row.policy.to_string(),
            row.seed.to_string(),
            row.jobs.to_string(),
        ];
        let tail: Vec<String> = match &row.outcome {
            Ok(m) => vec![
                "ok".into(),
                m.mean_wait.mean.to_string(),
                m.mean_wait.half_width.to_string(),
                join(m.wait_per_type.iter().map(|e| e.map(|i| i.mean))),
                join(m.wait_per_type.iter().map(|e| e.map(|i| i.half_width))),
                m.queueing_probability.mean.to_string(),
                m.queueing_probability.half_width.to_string(),
                m.workload.mean.to_string(),
                m.workload.half_width.to_string(),
                join(m.z_per_type.iter().map(|i| Some(i.mean))),
                join(m.z_per_type.iter().map(|i| Some(i.half_width))),
                m.audit_epochs.to_string(),
                m.audit_violations.to_string(),
                m.preemptions.to_string(),
                m.events.to_string(),
            ],
            Err(e) => {
                let mut v = vec![format!("error: {e}")];
                v.resize(SWEEP_COLUMNS.len() - head.len(), String::new());
                v
            }
        };
        w.write_record(head.iter().chain(&tail))?;
    }
    w.flush()?;
    Ok(())
}

pub const BOUNDS_COLUMNS: [&str; 13] = [
    "source",
    "n",
    "delta",
    "sigma2",
    "delta_prime",
    "workload_lower",
    "workload_upper",
    "fcfs_wait_lower",
    "fcfs_wait_upper",
    "universal_lower",
    "snf_upper",
    "qp_exponent",
    "assumptions_hold",
];

fn bound_cell(b: &Bound) -> String {
    b.value().map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn write_bounds_csv<W: Write>(output: &SweepOutput, out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BOUNDS_COLUMNS)?;
    for (n, report) in &output.bounds {
        let mut record = vec![output.source.clone(), n.to_string()];
        match report {
            Ok(r) => record.extend([
                r.delta.to_string(),
                r.sigma2.to_string(),
                r.delta_prime.to_string(),
                bound_cell(&r.workload_lower),
                bound_cell(&r.workload_upper),
                bound_cell(&r.fcfs_wait_lower),
                bound_cell(&r.fcfs_wait_upper),
                bound_cell(&r.universal_lower),
                bound_cell(&r.snf_upper),
                r.qp_exponent.to_string(),
                r.assumptions.holds.all().to_string(),
            ]),
            Err(e) => {
                record.push(format!("error: {e}"));
                record.resize(BOUNDS_COLUMNS.len(), String::new());
            }
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Time-weighted fraction of `window` during which
/// `Phi = sum_i c_i l_i (X_i - lambda_i / mu_i) <= -k`, for each threshold.
///
/// `X` is rebuilt from per-job arrival and departure times, so this works
/// without a recorded trajectory.
pub fn left_tail_frequencies(
    jobs: &[JobOutcome],
    config: &SystemConfig,
    c: &[f64],
    window: (f64, f64),
    thresholds: &[f64],
) -> Vec<f64> {
    let needs = config.needs();
    let weight: Vec<f64> = c.iter().zip(&needs).map(|(ci, &l)| ci * f64::from(l)).collect();
    let centre: f64 =
        config.types().iter().zip(&weight).map(|(t, w)| w * t.arrival_rate / t.service_rate).sum();
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * jobs.len());
    for j in jobs {
        let w = weight[j.type_index as usize];
        events.push((j.arrival, w));
        events.push((j.departure, -w));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut time_below = vec![0.0; thresholds.len()];
    let mut level = 0.0;
    let mut last = window.0;
    let mut k = 0;
    let mut add = |from: f64, to: f64, phi: f64| {
        let (a, b) = (from.max(window.0), to.min(window.1));
        if b > a {
            for (acc, &t) in time_below.iter_mut().zip(thresholds) {
                if phi <= -t {
                    *acc += b - a;
                }
            }
        }
    };
    while k < events.len() {
        let t = events[k].0;
        add(last, t, level - centre);
        while k < events.len() && events[k].0 == t {
            level += events[k].1;
            k += 1;
        }
        last = t.max(window.0);
    }
    add(last, window.1, level - centre);
    let span = window.1 - window.0;
    time_below.iter().map(|v| v / span).collect()
}

/// Named invariant suites behind the `verify` subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifySuite {
    Coupling,
    Oracle,
    Tails,
    Drift,
}

impl VerifySuite {
    pub const ALL: [VerifySuite; 4] = [VerifySuite::Coupling, VerifySuite::Oracle, VerifySuite::Tails, VerifySuite::Drift];
}

impl fmt::Display for VerifySuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerifySuite::Coupling => "coupling",
            VerifySuite::Oracle => "oracle",
            VerifySuite::Tails => "tails",
            VerifySuite::Drift => "drift",
        })
    }
}

impl FromStr for VerifySuite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VerifySuite::ALL
            .into_iter()
            .find(|v| v.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown suite '{s}' (expected coupling|oracle|tails|drift)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: VerifySuite,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult { name: name.into(), passed, detail: detail.into() }
}

/// Run a suite with fixed seeds. `scale` multiplies the default job counts.
pub fn run_verify(suite: VerifySuite, scale: f64) -> Result<VerifyReport, ExperimentError> {
    let jobs = |k: usize| ((k as f64 * scale) as usize).max(20 * DEFAULT_BATCHES);
    let checks = match suite {
        VerifySuite::Coupling => verify_coupling(jobs(100_000))?,
        VerifySuite::Oracle => verify_oracle(jobs(200_000))?,
        VerifySuite::Tails => verify_tails(jobs(500_000))?,
        VerifySuite::Drift => verify_drift(jobs(200_000))?,
    };
    Ok(VerifyReport { suite, checks })
}

fn verify_coupling(jobs: usize) -> Result<Vec<CheckResult>, ExperimentError> {
    let config = make_param_set(ParamSet::One, 64)?;
    let opts = SimOptions::default();
    let mut checks = Vec::new();
    for seed in 1..=5u64 {
        let stream = build_job_stream(seed, jobs, &config)?;
        let r = simulate_coupled(&sandwich_systems(&config), &config, &stream, &opts)?;
        let ok = check_sandwich(&r[0], &r[1], &r[2])?;
        checks.push(check(format!("sandwich seed {seed}"), ok, format!("{jobs} jobs, n=64")));
        let inf = simulate(PolicyKind::InfiniteServer, &config, &stream, &opts)?;
        let ok = check_infinite_server_dominance(&inf, &r[1])?;
        checks.push(check(format!("infinite-server dominance seed {seed}"), ok, "against FCFS"));
    }
    Ok(checks)
}

fn verify_oracle(jobs: usize) -> Result<Vec<CheckResult>, ExperimentError> {
    let mut checks = Vec::new();
    let opts = SimOptions::default();

    let mm2 = SystemConfig::new(2, vec![crate::model::JobTypeSpec::new(1.0, 1.0, 1)])?;
    let exact = erlang_c(2, 1.0, 1.0).expect("stable");
    let r = simulate(PolicyKind::Fcfs, &mm2, &build_job_stream(1, jobs, &mm2)?, &opts)?;
    let w = mean_waiting_time(&r, DEFAULT_BATCHES)?.overall;
    checks.push(check(
        "erlang-c mean wait",
        w.contains(exact.mean_wait),
        format!("sim {:.5} +/- {:.5}, exact {:.5}", w.mean, w.half_width, exact.mean_wait),
    ));

    let mm1 = SystemConfig::new(4, vec![crate::model::JobTypeSpec::new(0.5, 1.0, 4)])?;
    let exact = whole_machine_mm1(0.5, 1.0).expect("stable");
    let stream = build_job_stream(2, jobs, &mm1)?;
    for policy in [PolicyKind::Fcfs, PolicyKind::Snf, PolicyKind::SnfNp] {
        let w = mean_waiting_time(&simulate(policy, &mm1, &stream, &opts)?, DEFAULT_BATCHES)?.overall;
        checks.push(check(
            format!("whole-machine {policy} mean wait"),
            w.contains(exact.mean_wait),
            format!("sim {:.5} +/- {:.5}, exact {:.5}", w.mean, w.half_width, exact.mean_wait),
        ));
    }

    let two = SystemConfig::new(
        6,
        vec![crate::model::JobTypeSpec::new(1.2, 1.0, 1), crate::model::JobTypeSpec::new(0.25, 0.5, 3)],
    )?;
    let solution = ctmc_stationary(&CtmcSpec::snf(two.clone()))?;
    checks.push(check(
        "ctmc certified",
        solution.certified,
        format!("residual {:.2e}, tail {:.2e}", solution.residual, solution.tail_mass_bound),
    ));
    let r = simulate(PolicyKind::Snf, &two, &build_job_stream(3, jobs, &two)?, &opts)?;
    for (i, target) in solution.moments.q.iter().enumerate() {
        let q = r.time_averages.q[i].estimate();
        checks.push(check(
            format!("ctmc E[Q_{}]", i + 1),
            q.contains(*target),
            format!("sim {:.5} +/- {:.5}, exact {:.5}", q.mean, q.half_width, target),
        ));
    }
    Ok(checks)
}

fn verify_tails(jobs: usize) -> Result<Vec<CheckResult>, ExperimentError> {
    let config = make_param_set(ParamSet::One, 64)?;
    let c: Vec<f64> = config.types().iter().map(|t| 1.0 / t.service_rate).collect();
    let r = simulate(PolicyKind::InfiniteServer, &config, &build_job_stream(1, jobs, &config)?, &SimOptions::default())?;
    Ok(tail_checks(&r, &config, &c))
}

/// One-sided left-tail checks on an infinite-server run at thresholds
/// `{0.5, 1, 1.5, 2} x sqrt(c_max^2 mu_max sigma2)`, each with a 3-sigma
/// binomial allowance over the measured arrivals.
pub fn tail_checks(result: &SimResult, config: &SystemConfig, c: &[f64]) -> Vec<CheckResult> {
    let scale = crate::bounds::mminf_negative_part_mean(config, c).expect("valid weights");
    let multiples = [0.5, 1.0, 1.5, 2.0];
    let thresholds: Vec<f64> = multiples.iter().map(|m| m * scale).collect();
    let freqs = left_tail_frequencies(&result.jobs, config, c, result.window, &thresholds);
    let samples = result.measured_jobs().len() as f64;
    multiples
        .iter()
        .zip(&thresholds)
        .zip(&freqs)
        .map(|((m, &k), &f)| {
            let bound = crate::bounds::mminf_tail(config, c, k).expect("valid input");
            let allowance = 3.0 * (bound * (1.0 - bound) / samples).sqrt();
            check(
                format!("left tail at {m} x scale"),
                f <= bound + allowance,
                format!("empirical {f:.5}, bound {bound:.5} + {allowance:.5}"),
            )
        })
        .collect()
}

fn verify_drift(jobs: usize) -> Result<Vec<CheckResult>, ExperimentError> {
    let config = make_param_set(ParamSet::One, 64)?;
    let stream = build_job_stream(1, jobs, &config)?;
    let mut checks = Vec::new();
    for policy in PolicyKind::ALL {
        let r = simulate(policy, &config, &stream, &SimOptions::default())?;
        checks.extend(drift_checks(&r, &config));
    }
    Ok(checks)
}

/// One check per type: the time-averaged `Z_i` CI contains `lambda_i / mu_i`.
pub fn drift_checks(result: &SimResult, config: &SystemConfig) -> Vec<CheckResult> {
    config
        .types()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let target = t.arrival_rate / t.service_rate;
            let z = result.time_averages.z[i].estimate();
            check(
                format!("{} E[Z_{}]", result.policy, i + 1),
                z.contains(target),
                format!("sim {:.4} +/- {:.4}, target {:.4}", z.mean, z.half_width, target),
            )
        })
        .collect()
}
