use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use crate::model::SystemConfig;
use crate::policies::{
    schedule_infinite, JobEntry, JobId, PolicyKind, QueueState, WorkConservationAuditor,
};
use crate::rng::{CounterRng, StreamRole};
use crate::stats::BatchIntegrator;

use super::{
    BatchSeries, EventKind, JobOutcome, JobStream, SimError, SimOptions, SimResult, SystemSpec,
    TimeAverages, Trajectory,
};

#[derive(Debug, Clone, Copy)]
struct Departure {
    time: f64,
    job: JobId,
    epoch: u32,
}

impl PartialEq for Departure {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Departure {}

impl PartialOrd for Departure {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Departure {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.job.cmp(&other.job))
    }
}

/// Mutable system state shared by all disciplines.
struct Core<'a> {
    stream: &'a JobStream,
    needs: Vec<u64>,
    mu: Vec<f64>,
    /// `u64::MAX` for the infinite-server system.
    capacity: u64,
    now: f64,
    x: Vec<u32>,
    z: Vec<u32>,
    busy: u64,
    total_need: u64,
    heap: BinaryHeap<Reverse<Departure>>,
    epoch: Vec<u32>,
    preempted: Vec<bool>,
    queued_since: Vec<f64>,
    wait: Vec<f64>,
    departure: Vec<f64>,
    resume_rng: CounterRng,
    preemptions: u64,
    /// Present jobs and their service flag, kept only for cross-checking.
    present: Option<BTreeMap<JobId, (usize, bool)>>,
}

impl<'a> Core<'a> {
    fn type_of(&self, job: JobId) -> usize {
        self.stream.types[job] as usize
    }

    fn idle(&self) -> u64 {
        self.capacity - self.busy
    }

    fn start(&mut self, job: JobId) {
        let ty = self.type_of(job);
        self.wait[job] += self.now - self.queued_since[job];
        self.z[ty] += 1;
        self.busy += self.needs[ty];
        debug_assert!(self.busy <= self.capacity);
        let duration = if self.preempted[job] {
            self.resume_rng.next_exp(self.mu[ty])
        } else {
            self.stream.unit_service[job] / self.mu[ty]
        };
        self.heap.push(Reverse(Departure { time: self.now + duration, job, epoch: self.epoch[job] }));
        if let Some(p) = self.present.as_mut() {
            p.insert(job, (ty, true));
        }
    }

    fn preempt(&mut self, job: JobId) {
        let ty = self.type_of(job);
        self.epoch[job] += 1;
        self.preempted[job] = true;
        self.queued_since[job] = self.now;
        self.z[ty] -= 1;
        self.busy -= self.needs[ty];
        self.preemptions += 1;
        if let Some(p) = self.present.as_mut() {
            p.insert(job, (ty, false));
        }
    }

    fn arrive(&mut self, job: JobId) {
        let ty = self.type_of(job);
        self.queued_since[job] = self.now;
        self.x[ty] += 1;
        self.total_need += self.needs[ty];
        if let Some(p) = self.present.as_mut() {
            p.insert(job, (ty, false));
        }
    }

    fn depart(&mut self, job: JobId) {
        let ty = self.type_of(job);
        self.departure[job] = self.now;
        self.x[ty] -= 1;
        self.z[ty] -= 1;
        self.busy -= self.needs[ty];
        self.total_need -= self.needs[ty];
        if let Some(p) = self.present.as_mut() {
            p.remove(&job);
        }
    }

    /// Pop the next live departure time without removing it.
    fn next_departure(&mut self) -> Option<Departure> {
        while let Some(&Reverse(d)) = self.heap.peek() {
            if d.epoch == self.epoch[d.job] {
                return Some(d);
            }
            self.heap.pop();
        }
        None
    }

    fn queue_state(&self) -> QueueState {
        let jobs = self
            .present
            .as_ref()
            .expect("cross-check enabled")
            .iter()
            .map(|(&job_id, &(type_index, in_service))| JobEntry { job_id, type_index, in_service })
            .collect();
        QueueState::new(self.needs.iter().map(|&l| l as u32).collect(), jobs)
    }

    fn serving(&self) -> BTreeSet<JobId> {
        self.present
            .as_ref()
            .expect("cross-check enabled")
            .iter()
            .filter(|(_, &(_, s))| s)
            .map(|(&j, _)| j)
            .collect()
    }
}

/// Incremental counterpart of each pure scheduling function.
enum Discipline {
    Fcfs { queue: VecDeque<JobId> },
    ModifiedFcfs { queue: VecDeque<JobId>, admit_while_busy_at_most: u64 },
    SnfNp { queues: Vec<VecDeque<JobId>> },
    /// In-service jobs of a type always precede its waiting jobs in arrival
    /// order, so the in-service set is the earliest `z_i` present jobs.
    Snf { waiting: Vec<VecDeque<JobId>>, serving: Vec<BTreeSet<JobId>> },
    Infinite,
}

impl Discipline {
    fn new(policy: PolicyKind, types: usize, capacity: u64, l_max: u64) -> Self {
        match policy {
            PolicyKind::Fcfs => Discipline::Fcfs { queue: VecDeque::new() },
            PolicyKind::ModifiedFcfs => Discipline::ModifiedFcfs {
                queue: VecDeque::new(),
                admit_while_busy_at_most: capacity.saturating_sub(l_max),
            },
            PolicyKind::SnfNp => Discipline::SnfNp { queues: vec![VecDeque::new(); types] },
            PolicyKind::Snf => Discipline::Snf {
                waiting: vec![VecDeque::new(); types],
                serving: vec![BTreeSet::new(); types],
            },
            PolicyKind::InfiniteServer => Discipline::Infinite,
        }
    }

    fn on_arrival(&mut self, core: &mut Core, job: JobId) {
        let ty = core.type_of(job);
        match self {
            Discipline::Fcfs { queue } | Discipline::ModifiedFcfs { queue, .. } => queue.push_back(job),
            Discipline::SnfNp { queues } => queues[ty].push_back(job),
            Discipline::Snf { waiting, .. } => waiting[ty].push_back(job),
            Discipline::Infinite => core.start(job),
        }
    }

    fn on_departure(&mut self, core: &Core, job: JobId) {
        if let Discipline::Snf { serving, .. } = self {
            serving[core.type_of(job)].remove(&job);
        }
    }

    fn schedule(&mut self, core: &mut Core) {
        match self {
            Discipline::Fcfs { queue } => {
                while let Some(&job) = queue.front() {
                    if core.needs[core.type_of(job)] > core.idle() {
                        break;
                    }
                    queue.pop_front();
                    core.start(job);
                }
            }
            Discipline::ModifiedFcfs { queue, admit_while_busy_at_most } => {
                while let Some(&job) = queue.front() {
                    if core.busy > *admit_while_busy_at_most || core.needs[core.type_of(job)] > core.idle() {
                        break;
                    }
                    queue.pop_front();
                    core.start(job);
                }
            }
            Discipline::SnfNp { queues } => loop {
                let mut best: Option<(u64, JobId, usize)> = None;
                for (ty, q) in queues.iter().enumerate() {
                    if let Some(&job) = q.front() {
                        let key = (core.needs[ty], job, ty);
                        if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                            best = Some(key);
                        }
                    }
                }
                match best {
                    Some((need, job, ty)) if need <= core.idle() => {
                        queues[ty].pop_front();
                        core.start(job);
                    }
                    _ => break,
                }
            },
            Discipline::Snf { waiting, serving } => {
                let mut remaining = core.capacity;
                let target: Vec<u32> = core
                    .x
                    .iter()
                    .zip(&core.needs)
                    .map(|(&xi, &l)| {
                        let zi = u64::from(xi).min(remaining / l);
                        remaining -= zi * l;
                        zi as u32
                    })
                    .collect();
                // Free servers first so the busy count never exceeds capacity.
                for ty in 0..target.len() {
                    while core.z[ty] > target[ty] {
                        let job = serving[ty].pop_last().expect("z counts serving jobs");
                        core.preempt(job);
                        waiting[ty].push_front(job);
                    }
                }
                for ty in 0..target.len() {
                    while core.z[ty] < target[ty] {
                        let job = waiting[ty].pop_front().expect("x - z jobs are waiting");
                        serving[ty].insert(job);
                        core.start(job);
                    }
                }
            }
            Discipline::Infinite => {}
        }
    }
}

const METRICS_PER_TYPE: usize = 3;

pub(super) fn run(
    spec: SystemSpec,
    config: &SystemConfig,
    stream: &JobStream,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    opts.validate()?;
    if stream.arrival_rates.len() != config.num_types()
        || stream.arrival_rates.iter().zip(config.types()).any(|(&r, t)| r != t.arrival_rate)
    {
        return Err(SimError::StreamMismatch);
    }
    if stream.is_empty() {
        return Err(SimError::EmptyStream);
    }
    let infinite = spec.policy == PolicyKind::InfiniteServer;
    let servers = if infinite { None } else { Some(spec.servers) };
    if let Some(n) = servers {
        if config.l_max() > n {
            return Err(SimError::NeedExceedsServers { need: config.l_max(), servers: n });
        }
    }
    let reference_n = servers.unwrap_or(config.n());
    let capacity = servers.map_or(u64::MAX, u64::from);
    let types = config.num_types();
    let jobs = stream.len();
    let l_max = u64::from(config.l_max());

    let horizon = stream.arrivals[jobs - 1];
    let window = (opts.warmup * horizon, horizon);
    let dims = types * METRICS_PER_TYPE + 3;
    let mut integrator =
        BatchIntegrator::new(window.0, window.1, opts.batches, dims).map_err(|_| SimError::EmptyWindow)?;

    let mut core = Core {
        stream,
        needs: config.needs().into_iter().map(u64::from).collect(),
        mu: config.types().iter().map(|t| t.service_rate).collect(),
        capacity,
        now: 0.0,
        x: vec![0; types],
        z: vec![0; types],
        busy: 0,
        total_need: 0,
        heap: BinaryHeap::new(),
        epoch: vec![0; jobs],
        preempted: vec![false; jobs],
        queued_since: vec![0.0; jobs],
        wait: vec![0.0; jobs],
        departure: vec![f64::NAN; jobs],
        resume_rng: CounterRng::new(stream.seed, StreamRole::Resume),
        preemptions: 0,
        present: opts.cross_check.then(BTreeMap::new),
    };
    let mut discipline = Discipline::new(spec.policy, types, capacity, l_max);
    let delta_prime = opts.audit_delta_prime.unwrap_or(l_max as f64);
    let mut auditor = servers.map(|n| WorkConservationAuditor::new(n, delta_prime));
    let mut trajectory = opts.record_trajectory.then(|| Trajectory::new(types));

    let workload_weight: Vec<f64> = core.needs.iter().zip(&core.mu).map(|(&l, &m)| l as f64 / m).collect();
    let mut values = vec![0.0; dims];
    let mut last_time = 0.0;
    let mut next_arrival = 0usize;
    let mut events = 0u64;

    loop {
        let departure = core.next_departure();
        let arrival_time = (next_arrival < jobs).then(|| stream.arrivals[next_arrival]);
        let (time, kind, job) = match (departure, arrival_time) {
            (Some(d), Some(a)) if d.time <= a => (d.time, EventKind::Departure, d.job),
            (_, Some(a)) => (a, EventKind::Arrival, next_arrival),
            (Some(d), None) => (d.time, EventKind::Departure, d.job),
            (None, None) => break,
        };

        if last_time < window.1 {
            fill_values(&mut values, &core, &workload_weight, reference_n);
            integrator.add(last_time, time, &values);
        }
        last_time = time;
        core.now = time;

        match kind {
            EventKind::Arrival => {
                core.arrive(job);
                next_arrival += 1;
            }
            EventKind::Departure => {
                core.heap.pop();
                core.depart(job);
            }
        }
        let before = opts.cross_check.then(|| core.queue_state());
        match kind {
            EventKind::Arrival => discipline.on_arrival(&mut core, job),
            EventKind::Departure => discipline.on_departure(&core, job),
        }
        discipline.schedule(&mut core);
        events += 1;

        if let Some(state) = before {
            let expected = if infinite {
                schedule_infinite(&state)
            } else {
                spec.policy.schedule(&state, spec.servers, config.l_max())
            };
            if expected.serve != core.serving() {
                return Err(SimError::CrossCheck { time, policy: spec.policy });
            }
        }
        if let Some(a) = auditor.as_mut() {
            if time >= window.0 {
                a.observe(core.busy, core.total_need);
            }
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(time, kind, core.type_of(job), &core.x, &core.z);
        }
    }
    if last_time < window.1 {
        fill_values(&mut values, &core, &workload_weight, reference_n);
        integrator.add(last_time, window.1, &values);
    }

    let outcomes = (0..jobs)
        .map(|k| JobOutcome {
            arrival: stream.arrivals[k],
            wait: core.wait[k],
            departure: core.departure[k],
            type_index: stream.types[k],
        })
        .collect();
    let first_measured_job = stream.arrivals.partition_point(|&a| a < window.0);
    let mut averages = integrator.averages().into_iter().map(|per_batch| BatchSeries { per_batch });
    let mut take = |k: usize| averages.by_ref().take(k).collect::<Vec<_>>();
    let x = take(types);
    let z = take(types);
    let q = take(types);
    let mut rest = take(3).into_iter();
    let time_averages = TimeAverages {
        x,
        z,
        q,
        workload: rest.next().expect("workload series"),
        queueing: rest.next().expect("queueing series"),
        busy: rest.next().expect("busy series"),
    };

    Ok(SimResult {
        policy: spec.policy,
        servers,
        reference_n,
        num_types: types,
        warmup: opts.warmup,
        window,
        first_measured_job,
        jobs: outcomes,
        time_averages,
        event_count: events,
        preemptions: core.preemptions,
        audit: auditor.map(WorkConservationAuditor::finish),
        trajectory,
    })
}

fn fill_values(values: &mut [f64], core: &Core, workload_weight: &[f64], reference_n: u32) {
    let types = core.x.len();
    let mut workload = 0.0;
    for i in 0..types {
        let q = core.x[i] - core.z[i];
        values[i] = f64::from(core.x[i]);
        values[types + i] = f64::from(core.z[i]);
        values[2 * types + i] = f64::from(q);
        workload += workload_weight[i] * f64::from(q);
    }
    let base = METRICS_PER_TYPE * types;
    values[base] = workload;
    values[base + 1] = if core.total_need >= u64::from(reference_n) { 1.0 } else { 0.0 };
    values[base + 2] = core.busy as f64;
}
