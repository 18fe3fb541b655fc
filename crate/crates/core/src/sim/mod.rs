//! Seeded discrete-event simulation of the multiserver-job system.
//!
//! Arrivals come from a [`JobStream`]; at every arrival and departure the
//! policy's scheduler runs. The horizon is a job count, and time averages are
//! taken over `[warmup * A_K, A_K]` where `A_K` is the last arrival. After
//! `A_K` the system drains without further arrivals so every job gets a
//! waiting time.
//!
//! Simultaneous events are ordered departures first (by job id), then the
//! arrival. Under preemptive SNF a resumed job draws a fresh exponential
//! remaining service time from the `Resume` stream; its waiting time is the
//! total time it spent out of service.

mod coupling;
mod engine;
mod stream;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coupling::{check_infinite_server_dominance, check_sandwich, sandwich_systems};
pub use stream::{build_job_stream, JobStream};

use crate::model::SystemConfig;
use crate::policies::{AuditResult, PolicyKind};
use crate::stats::{BatchMeansEstimate, DEFAULT_BATCHES};

pub const DEFAULT_WARMUP: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("job stream is empty")]
    EmptyStream,
    #[error("job stream was built for different arrival rates")]
    StreamMismatch,
    #[error("a job needs {need} servers but the system has {servers}")]
    NeedExceedsServers { need: u32, servers: u32 },
    #[error("warm-up fraction must lie in [0, 1), got {0}")]
    BadWarmup(f64),
    #[error("need at least 2 batches, got {0}")]
    BadBatches(usize),
    #[error("post-warm-up window has zero length")]
    EmptyWindow,
    #[error("incremental {policy} scheduler disagreed with the reference schedule at t={time}")]
    CrossCheck { time: f64, policy: PolicyKind },
    #[error("coupled results differ in job count ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Fraction of simulated time discarded before measuring.
    pub warmup: f64,
    pub batches: usize,
    /// Audit threshold; defaults to `l_max`.
    pub audit_delta_prime: Option<f64>,
    pub record_trajectory: bool,
    /// Compare the incremental scheduler with the reference schedule
    /// function at every event. Slow; meant for tests.
    pub cross_check: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            warmup: DEFAULT_WARMUP,
            batches: DEFAULT_BATCHES,
            audit_delta_prime: None,
            record_trajectory: false,
            cross_check: false,
        }
    }
}

impl SimOptions {
    fn validate(&self) -> Result<(), SimError> {
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(SimError::BadWarmup(self.warmup));
        }
        if self.batches < 2 {
            return Err(SimError::BadBatches(self.batches));
        }
        Ok(())
    }
}

/// A policy on a server count. The count is ignored for the infinite-server
/// system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub policy: PolicyKind,
    pub servers: u32,
}

impl SystemSpec {
    pub fn new(policy: PolicyKind, servers: u32) -> Self {
        Self { policy, servers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub arrival: f64,
    pub wait: f64,
    pub departure: f64,
    pub type_index: u16,
}

/// Per-batch time averages of one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSeries {
    pub per_batch: Vec<f64>,
}

impl BatchSeries {
    pub fn mean(&self) -> f64 {
        self.per_batch.iter().sum::<f64>() / self.per_batch.len() as f64
    }

    pub fn estimate(&self) -> BatchMeansEstimate {
        BatchMeansEstimate::from_batch_means(self.per_batch.clone()).expect("at least 2 batches")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAverages {
    pub x: Vec<BatchSeries>,
    pub z: Vec<BatchSeries>,
    pub q: Vec<BatchSeries>,
    /// `sum_i (l_i / mu_i) Q_i`
    pub workload: BatchSeries,
    /// `1{sum_i l_i X_i >= n}`
    pub queueing: BatchSeries,
    /// `sum_i l_i Z_i`
    pub busy: BatchSeries,
}

impl TimeAverages {
    /// Per-batch `Q_i / sum_j Q_j`; batches with an empty queue are skipped.
    pub fn queue_fraction(&self, i: usize) -> Option<BatchMeansEstimate> {
        let batches = self.q[i].per_batch.len();
        let fractions: Vec<f64> = (0..batches)
            .filter_map(|b| {
                let total: f64 = self.q.iter().map(|s| s.per_batch[b]).sum();
                (total > 0.0).then(|| self.q[i].per_batch[b] / total)
            })
            .collect();
        BatchMeansEstimate::from_batch_means(fractions).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Arrival,
    Departure,
}

/// State after every event, stored column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub num_types: usize,
    pub times: Vec<f64>,
    pub kinds: Vec<EventKind>,
    pub event_types: Vec<u16>,
    /// Flattened `x` vectors, `num_types` per event.
    pub x: Vec<u32>,
    pub z: Vec<u32>,
}

impl Trajectory {
    fn new(num_types: usize) -> Self {
        Self { num_types, times: Vec::new(), kinds: Vec::new(), event_types: Vec::new(), x: Vec::new(), z: Vec::new() }
    }

    fn push(&mut self, t: f64, kind: EventKind, ty: usize, x: &[u32], z: &[u32]) {
        self.times.push(t);
        self.kinds.push(kind);
        self.event_types.push(ty as u16);
        self.x.extend_from_slice(x);
        self.z.extend_from_slice(z);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x_at(&self, k: usize) -> &[u32] {
        &self.x[k * self.num_types..(k + 1) * self.num_types]
    }

    pub fn z_at(&self, k: usize) -> &[u32] {
        &self.z[k * self.num_types..(k + 1) * self.num_types]
    }

    /// `(x, z)` pairs in event order, as consumed by the work-conservation audit.
    pub fn states(&self) -> impl Iterator<Item = (&[u32], &[u32])> {
        (0..self.len()).map(move |k| (self.x_at(k), self.z_at(k)))
    }

    /// Write the comma-separated dump: header
    /// `t,kind,type,x1..xI,z1..zI`, one line per event, type one-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let xs: Vec<String> = (1..=self.num_types).map(|i| format!("x{i}")).collect();
        let zs: Vec<String> = (1..=self.num_types).map(|i| format!("z{i}")).collect();
        writeln!(out, "t,kind,type,{},{}", xs.join(","), zs.join(","))?;
        for k in 0..self.len() {
            let kind = match self.kinds[k] {
                EventKind::Arrival => "arrival",
                EventKind::Departure => "departure",
            };
            write!(out, "{},{},{}", self.times[k], kind, self.event_types[k] + 1)?;
            for v in self.x_at(k).iter().chain(self.z_at(k)) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: PolicyKind,
    /// `None` for the infinite-server system.
    pub servers: Option<u32>,
    /// Server count used for the queueing indicator.
    pub reference_n: u32,
    pub num_types: usize,
    pub warmup: f64,
    pub window: (f64, f64),
    /// Index of the first job arriving inside the measurement window.
    pub first_measured_job: usize,
    pub jobs: Vec<JobOutcome>,
    pub time_averages: TimeAverages,
    pub event_count: u64,
    pub preemptions: u64,
    pub audit: Option<AuditResult>,
    pub trajectory: Option<Trajectory>,
}

impl SimResult {
    pub fn measured_jobs(&self) -> &[JobOutcome] {
        &self.jobs[self.first_measured_job..]
    }

    pub fn waits(&self) -> impl Iterator<Item = f64> + '_ {
        self.jobs.iter().map(|j| j.wait)
    }

    /// Fraction of simulated time discarded as warm-up.
    pub fn warmup_discarded(&self) -> f64 {
        self.warmup
    }
}

/// Simulate `policy` on the config's own server count.
pub fn simulate(
    policy: PolicyKind,
    config: &SystemConfig,
    stream: &JobStream,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    engine::run(SystemSpec::new(policy, config.n()), config, stream, opts)
}

pub fn simulate_system(
    system: SystemSpec,
    config: &SystemConfig,
    stream: &JobStream,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    engine::run(system, config, stream, opts)
}

/// Run every system on the same job stream; results come back in input order.
pub fn simulate_coupled(
    systems: &[SystemSpec],
    config: &SystemConfig,
    stream: &JobStream,
    opts: &SimOptions,
) -> Result<Vec<SimResult>, SimError> {
    systems.iter().map(|&s| engine::run(s, config, stream, opts)).collect()
}
