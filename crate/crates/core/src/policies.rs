//! Scheduling policies as pure functions of the queue state, and the
//! work-conservation auditor.
//!
//! These are the reference definitions. The simulator keeps incremental data
//! structures for speed and can cross-check itself against these functions at
//! every event (see `SimOptions::cross_check`).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub type JobId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "fcfs")]
    Fcfs,
    #[serde(rename = "snf")]
    Snf,
    #[serde(rename = "snf-np")]
    SnfNp,
    #[serde(rename = "mod-fcfs")]
    ModifiedFcfs,
    #[serde(rename = "inf")]
    InfiniteServer,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Fcfs,
        PolicyKind::Snf,
        PolicyKind::SnfNp,
        PolicyKind::ModifiedFcfs,
        PolicyKind::InfiniteServer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Fcfs => "fcfs",
            PolicyKind::Snf => "snf",
            PolicyKind::SnfNp => "snf-np",
            PolicyKind::ModifiedFcfs => "mod-fcfs",
            PolicyKind::InfiniteServer => "inf",
        }
    }

    pub fn is_preemptive(&self) -> bool {
        matches!(self, PolicyKind::Snf)
    }

    /// Apply the policy to `state` on `n` servers. `l_max` is only used by
    /// Modified-FCFS.
    pub fn schedule(&self, state: &QueueState, n: u32, l_max: u32) -> Schedule {
        match self {
            PolicyKind::Fcfs => schedule_fcfs(state, n),
            PolicyKind::Snf => schedule_snf(state, n),
            PolicyKind::SnfNp => schedule_snf_np(state, n),
            PolicyKind::ModifiedFcfs => schedule_modified_fcfs(state, n, l_max),
            PolicyKind::InfiniteServer => schedule_infinite(state),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fcfs" => Ok(PolicyKind::Fcfs),
            "snf" => Ok(PolicyKind::Snf),
            "snf-np" | "snf_np" | "snfnp" => Ok(PolicyKind::SnfNp),
            "mod-fcfs" | "mod_fcfs" | "modified-fcfs" => Ok(PolicyKind::ModifiedFcfs),
            "inf" | "infinite" => Ok(PolicyKind::InfiniteServer),
            other => Err(format!(
                "unknown policy '{other}' (expected fcfs|snf|snf-np|mod-fcfs|inf)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobEntry {
    pub job_id: JobId,
    pub type_index: usize,
    pub in_service: bool,
}

/// Jobs present in the system, ordered by arrival, with per-type counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueState {
    needs: Vec<u32>,
    jobs: Vec<JobEntry>,
    x: Vec<u32>,
    z: Vec<u32>,
}

impl QueueState {
    /// Build from a job list; jobs are sorted by id (arrival order).
    pub fn new(needs: Vec<u32>, mut jobs: Vec<JobEntry>) -> Self {
        jobs.sort_by_key(|j| j.job_id);
        let mut x = vec![0; needs.len()];
        let mut z = vec![0; needs.len()];
        for j in &jobs {
            x[j.type_index] += 1;
            if j.in_service {
                z[j.type_index] += 1;
            }
        }
        Self { needs, jobs, x, z }
    }

    /// All jobs waiting, in the given arrival order of types.
    pub fn waiting(needs: Vec<u32>, types_in_arrival_order: &[usize]) -> Self {
        let jobs = types_in_arrival_order
            .iter()
            .enumerate()
            .map(|(job_id, &type_index)| JobEntry { job_id, type_index, in_service: false })
            .collect();
        Self::new(needs, jobs)
    }

    pub fn jobs(&self) -> &[JobEntry] {
        &self.jobs
    }

    pub fn needs(&self) -> &[u32] {
        &self.needs
    }

    pub fn x(&self) -> &[u32] {
        &self.x
    }

    pub fn z(&self) -> &[u32] {
        &self.z
    }

    pub fn busy(&self) -> u64 {
        self.z.iter().zip(&self.needs).map(|(&z, &l)| u64::from(z) * u64::from(l)).sum()
    }

    fn need_of(&self, j: &JobEntry) -> u64 {
        u64::from(self.needs[j.type_index])
    }

    /// Apply a schedule: the jobs in `serve` become the in-service set.
    pub fn apply(&self, schedule: &Schedule) -> QueueState {
        let jobs = self
            .jobs
            .iter()
            .map(|j| JobEntry { in_service: schedule.serve.contains(&j.job_id), ..*j })
            .collect();
        QueueState::new(self.needs.clone(), jobs)
    }
}

/// The set of jobs to have in service.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schedule {
    pub serve: BTreeSet<JobId>,
}

impl Schedule {
    /// Per-type in-service counts under this schedule.
    pub fn z(&self, state: &QueueState) -> Vec<u32> {
        let mut z = vec![0; state.needs.len()];
        for j in &state.jobs {
            if self.serve.contains(&j.job_id) {
                z[j.type_index] += 1;
            }
        }
        z
    }

    pub fn server_need(&self, state: &QueueState) -> u64 {
        state.jobs.iter().filter(|j| self.serve.contains(&j.job_id)).map(|j| state.need_of(j)).sum()
    }
}

fn in_service(state: &QueueState) -> (BTreeSet<JobId>, u64) {
    let serve: BTreeSet<JobId> =
        state.jobs.iter().filter(|j| j.in_service).map(|j| j.job_id).collect();
    (serve, state.busy())
}

/// First-come-first-serve with head-of-line blocking: admit waiting jobs in
/// arrival order and stop at the first one that does not fit.
pub fn schedule_fcfs(state: &QueueState, n: u32) -> Schedule {
    let (mut serve, mut busy) = in_service(state);
    for j in state.jobs.iter().filter(|j| !j.in_service) {
        let need = state.need_of(j);
        if busy + need > u64::from(n) {
            break;
        }
        busy += need;
        serve.insert(j.job_id);
    }
    Schedule { serve }
}

/// Preemptive smallest-need-first: repack from scratch using only the counts,
/// serving the earliest-arrived jobs within each type.
pub fn schedule_snf(state: &QueueState, n: u32) -> Schedule {
    let z = snf_counts(&state.x, &state.needs, n);
    let mut remaining = z;
    let mut serve = BTreeSet::new();
    for j in &state.jobs {
        if remaining[j.type_index] > 0 {
            remaining[j.type_index] -= 1;
            serve.insert(j.job_id);
        }
    }
    Schedule { serve }
}

/// Greedy priority packing of the count vector: types in order of need.
pub fn snf_counts(x: &[u32], needs: &[u32], n: u32) -> Vec<u32> {
    let mut remaining = n;
    x.iter()
        .zip(needs)
        .map(|(&xi, &l)| {
            let zi = xi.min(remaining / l);
            remaining -= zi * l;
            zi
        })
        .collect()
}

/// Non-preemptive smallest-need-first: keep everything in service, then admit
/// the waiting job with the smallest need (earliest arrival on ties) while it
/// fits.
pub fn schedule_snf_np(state: &QueueState, n: u32) -> Schedule {
    let (mut serve, busy) = in_service(state);
    let mut idle = u64::from(n).saturating_sub(busy);
    let mut waiting: Vec<&JobEntry> = state.jobs.iter().filter(|j| !j.in_service).collect();
    waiting.sort_by_key(|j| (state.need_of(j), j.job_id));
    for j in waiting {
        let need = state.need_of(j);
        if need > idle {
            break;
        }
        idle -= need;
        serve.insert(j.job_id);
    }
    Schedule { serve }
}

/// FCFS that admits the next job only while at least `l_max` servers are idle.
pub fn schedule_modified_fcfs(state: &QueueState, n: u32, l_max: u32) -> Schedule {
    let (mut serve, mut busy) = in_service(state);
    let threshold = u64::from(n.saturating_sub(l_max));
    for j in state.jobs.iter().filter(|j| !j.in_service) {
        let need = state.need_of(j);
        if busy > threshold || busy + need > u64::from(n) {
            break;
        }
        busy += need;
        serve.insert(j.job_id);
    }
    Schedule { serve }
}

/// Every job is served on arrival.
pub fn schedule_infinite(state: &QueueState) -> Schedule {
    Schedule { serve: state.jobs.iter().map(|j| j.job_id).collect() }
}

/// Outcome of a work-conservation audit.
///
/// `worst_slack` is the minimum over audited epochs of
/// `busy - min(total_need, n - delta_prime)`; a negative value is a violation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub delta_prime: f64,
    pub epochs: u64,
    pub violations: u64,
    pub worst_slack: Option<f64>,
}

impl AuditResult {
    pub fn is_clean(&self) -> bool {
        self.violations == 0
    }
}

/// Online fold behind [`audit_work_conservation`].
#[derive(Debug, Clone)]
pub struct WorkConservationAuditor {
    n: u32,
    result: AuditResult,
}

impl WorkConservationAuditor {
    pub fn new(n: u32, delta_prime: f64) -> Self {
        Self {
            n,
            result: AuditResult { delta_prime, epochs: 0, violations: 0, worst_slack: None },
        }
    }

    /// Record one epoch given busy servers `sum l_i z_i` and total need
    /// `sum l_i x_i`.
    pub fn observe(&mut self, busy: u64, total_need: u64) {
        let floor = (total_need as f64).min(f64::from(self.n) - self.result.delta_prime);
        let slack = busy as f64 - floor;
        self.result.epochs += 1;
        if slack < 0.0 {
            self.result.violations += 1;
        }
        self.result.worst_slack = Some(self.result.worst_slack.map_or(slack, |w| w.min(slack)));
    }

    pub fn finish(self) -> AuditResult {
        self.result
    }
}

/// Count epochs where `sum l_i z_i < min(sum l_i x_i, n - delta_prime)`.
pub fn audit_work_conservation<'a, I>(
    trajectory: I,
    needs: &[u32],
    n: u32,
    delta_prime: f64,
) -> AuditResult
where
    I: IntoIterator<Item = (&'a [u32], &'a [u32])>,
{
    let weighted = |v: &[u32]| -> u64 {
        v.iter().zip(needs).map(|(&c, &l)| u64::from(c) * u64::from(l)).sum()
    };
    let mut auditor = WorkConservationAuditor::new(n, delta_prime);
    for (x, z) in trajectory {
        auditor.observe(weighted(z), weighted(x));
    }
    auditor.finish()
}
