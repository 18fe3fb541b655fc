//! Exact references for small systems.
//!
//! [`erlang_c`] and [`whole_machine_mm1`] are closed forms. [`ctmc_stationary`]
//! solves the count-vector chain on a truncated box for allocations that are
//! a function of the counts alone. States are ordered lexicographically, so
//! the generator is banded with bandwidth equal to the stride of the leading
//! coordinate; the balance equations are solved by banded Gaussian
//! elimination without pivoting.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SystemConfig;
use crate::policies::snf_counts;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("unstable: offered load {load} is not below capacity {capacity}")]
    Unstable { load: f64, capacity: f64 },
    #[error("rates must be positive and finite")]
    BadRate,
    #[error("server count must be positive")]
    NoServers,
    #[error("cap vector has {got} entries, expected {expected}")]
    CapLength { got: usize, expected: usize },
    #[error("truncated box has {0} states, above the limit of {MAX_STATES}")]
    TooManyStates(usize),
    #[error("allocation {z:?} is infeasible at state {x:?}")]
    Infeasible { x: Vec<u32>, z: Vec<u32> },
    #[error("balance equations are singular at pivot {0}")]
    Singular(usize),
}

pub const MAX_STATES: usize = 4_000_000;
pub const TAIL_TARGET: f64 = 1e-8;
pub const RESIDUAL_TARGET: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaitReference {
    pub p_wait: f64,
    pub mean_wait: f64,
}

/// M/M/n with unit needs. Uses the Erlang-B recursion for stability.
pub fn erlang_c(n: u32, lambda: f64, mu: f64) -> Result<WaitReference, OracleError> {
    if n == 0 {
        return Err(OracleError::NoServers);
    }
    if !(lambda > 0.0 && mu > 0.0 && lambda.is_finite() && mu.is_finite()) {
        return Err(OracleError::BadRate);
    }
    let a = lambda / mu;
    let nf = f64::from(n);
    if a >= nf {
        return Err(OracleError::Unstable { load: a, capacity: nf });
    }
    let mut b = 1.0;
    for k in 1..=n {
        b = a * b / (f64::from(k) + a * b);
    }
    let p_wait = nf * b / (nf - a * (1.0 - b));
    Ok(WaitReference { p_wait, mean_wait: p_wait / (nf * mu - lambda) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mm1Reference {
    pub p_wait: f64,
    pub mean_wait: f64,
    pub mean_queue: f64,
}

/// Jobs that each occupy every server turn the system into M/M/1.
pub fn whole_machine_mm1(lambda: f64, mu: f64) -> Result<Mm1Reference, OracleError> {
    if !(lambda > 0.0 && mu > 0.0 && lambda.is_finite() && mu.is_finite()) {
        return Err(OracleError::BadRate);
    }
    let rho = lambda / mu;
    if rho >= 1.0 {
        return Err(OracleError::Unstable { load: rho, capacity: 1.0 });
    }
    Ok(Mm1Reference { p_wait: rho, mean_wait: rho / (mu - lambda), mean_queue: rho * rho / (1.0 - rho) })
}

/// In-service counts as a function of the count vector.
pub type AllocationFn = Arc<dyn Fn(&[u32]) -> Vec<u32> + Send + Sync>;

/// Maps a count vector to the in-service counts.
#[derive(Clone)]
pub enum Allocation {
    /// Preemptive smallest-need-first.
    Snf,
    Custom(AllocationFn),
}

impl fmt::Debug for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Allocation::Snf => f.write_str("Snf"),
            Allocation::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CtmcSpec {
    pub config: SystemConfig,
    pub allocation: Allocation,
    /// Fixed per-type caps. `None` starts from the default caps and grows them
    /// until the boundary mass drops below [`TAIL_TARGET`].
    pub caps: Option<Vec<u32>>,
}

impl CtmcSpec {
    pub fn snf(config: SystemConfig) -> Self {
        Self { config, allocation: Allocation::Snf, caps: None }
    }

    pub fn with_caps(mut self, caps: Vec<u32>) -> Self {
        self.caps = Some(caps);
        self
    }
}

/// `lambda_i / mu_i + 40 sqrt(lambda_i / mu_i) + 40`, rounded up.
pub fn default_caps(config: &SystemConfig) -> Vec<u32> {
    config
        .types()
        .iter()
        .map(|t| {
            let m = t.arrival_rate / t.service_rate;
            (m + 40.0 * m.sqrt() + 40.0).ceil() as u32
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryMoments {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub q: Vec<f64>,
    /// `E[sum_i (l_i / mu_i) Q_i]`
    pub workload: f64,
    /// `E[sum_i (l_i / mu_i) (X_i - lambda_i / mu_i)]`
    pub normalized_work: f64,
    /// `P(sum_i l_i X_i >= n)`
    pub queueing_probability: f64,
    /// Per-type `E[Q_i] / lambda_i`.
    pub mean_wait_per_type: Vec<f64>,
    /// `sum_i E[Q_i] / lambda`.
    pub mean_wait: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarySolution {
    pub caps: Vec<u32>,
    /// Probabilities in lexicographic order of `(x_1, ..., x_I)`, each
    /// `x_i` in `0..=caps[i]`.
    pub pi: Vec<f64>,
    /// Mass on states with some `x_i = caps[i]`.
    pub tail_mass_bound: f64,
    /// `max_j |(pi Q)_j|`
    pub residual: f64,
    pub moments: StationaryMoments,
    /// Tail mass and residual are both under their targets.
    pub certified: bool,
}

impl StationarySolution {
    pub fn probability(&self, x: &[u32]) -> f64 {
        let mut idx = 0usize;
        for (i, &v) in x.iter().enumerate() {
            if v > self.caps[i] {
                return 0.0;
            }
            idx = idx * (self.caps[i] as usize + 1) + v as usize;
        }
        self.pi[idx]
    }
}

pub fn ctmc_stationary(spec: &CtmcSpec) -> Result<StationarySolution, OracleError> {
    let types = spec.config.num_types();
    if let Some(caps) = &spec.caps {
        if caps.len() != types {
            return Err(OracleError::CapLength { got: caps.len(), expected: types });
        }
        return solve_box(spec, caps);
    }
    let mut caps = default_caps(&spec.config);
    loop {
        let solution = solve_box(spec, &caps)?;
        if solution.tail_mass_bound < TAIL_TARGET {
            return Ok(solution);
        }
        let grown: Vec<u32> = caps.iter().map(|&c| c + c / 2 + 1).collect();
        if state_count(&grown) > MAX_STATES {
            return Ok(solution);
        }
        caps = grown;
    }
}

fn state_count(caps: &[u32]) -> usize {
    caps.iter().fold(1usize, |acc, &c| acc.saturating_mul(c as usize + 1))
}

struct StateBox {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl StateBox {
    fn new(caps: &[u32]) -> Self {
        let sizes: Vec<usize> = caps.iter().map(|&c| c as usize + 1).collect();
        let mut strides = vec![1; sizes.len()];
        for i in (0..sizes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sizes[i + 1];
        }
        let len = sizes.iter().product();
        Self { sizes, strides, len }
    }

    fn decode(&self, mut idx: usize, x: &mut [u32]) {
        for i in (0..self.sizes.len()).rev() {
            x[i] = (idx % self.sizes[i]) as u32;
            idx /= self.sizes[i];
        }
    }
}

/// Row-major band storage with equal lower and upper bandwidth.
struct Banded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Banded {
    fn new(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    fn at(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r.abs_diff(c) <= self.bw);
        &mut self.data[r * (2 * self.bw + 1) + c + self.bw - r]
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * (2 * self.bw + 1) + c + self.bw - r]
    }

    /// Solve in place by elimination without pivoting.
    fn solve(mut self, mut rhs: Vec<f64>) -> Result<Vec<f64>, OracleError> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.get(k, k);
            if !(pivot.abs() > 0.0) {
                return Err(OracleError::Singular(k));
            }
            let last = (k + bw).min(n - 1);
            for r in k + 1..=last {
                let factor = self.get(r, k) / pivot;
                if factor == 0.0 {
                    continue;
                }
                *self.at(r, k) = 0.0;
                for c in k + 1..=last {
                    let v = self.get(k, c);
                    if v != 0.0 {
                        *self.at(r, c) -= factor * v;
                    }
                }
                rhs[r] -= factor * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let last = (k + bw).min(n - 1);
            let mut s = rhs[k];
            for c in k + 1..=last {
                s -= self.get(k, c) * rhs[c];
            }
            rhs[k] = s / self.get(k, k);
        }
        Ok(rhs)
    }
}

fn solve_box(spec: &CtmcSpec, caps: &[u32]) -> Result<StationarySolution, OracleError> {
    let config = &spec.config;
    let types = config.num_types();
    let needs = config.needs();
    let lambda: Vec<f64> = config.types().iter().map(|t| t.arrival_rate).collect();
    let mu: Vec<f64> = config.types().iter().map(|t| t.service_rate).collect();
    let total = state_count(caps);
    if total > MAX_STATES {
        return Err(OracleError::TooManyStates(total));
    }
    let space = StateBox::new(caps);
    let bw = space.strides[0];

    // Allocation and total outflow per state.
    let mut z_all = vec![0u32; space.len * types];
    let mut out = vec![0.0; space.len];
    let mut x = vec![0u32; types];
    for s in 0..space.len {
        space.decode(s, &mut x);
        let z = match &spec.allocation {
            Allocation::Snf => snf_counts(&x, &needs, config.n()),
            Allocation::Custom(f) => f(&x),
        };
        let busy: u64 = z.iter().zip(&needs).map(|(&a, &b)| u64::from(a) * u64::from(b)).sum();
        if z.len() != types || z.iter().zip(&x).any(|(a, b)| a > b) || busy > u64::from(config.n()) {
            return Err(OracleError::Infeasible { x: x.clone(), z });
        }
        for i in 0..types {
            if x[i] < caps[i] {
                out[s] += lambda[i];
            }
            out[s] += mu[i] * f64::from(z[i]);
        }
        z_all[s * types..(s + 1) * types].copy_from_slice(&z);
    }

    // Balance: for each state t, out(t) pi(t) - sum_s pi(s) q(s, t) = 0.
    // Row 0 is replaced by out(0) pi(0) = out(0), fixing the scale.
    let mut a = Banded::new(space.len, bw);
    for s in 0..space.len {
        *a.at(s, s) = out[s];
        space.decode(s, &mut x);
        for i in 0..types {
            if x[i] < caps[i] {
                let t = s + space.strides[i];
                if t != 0 {
                    *a.at(t, s) -= lambda[i];
                }
            }
            let z = z_all[s * types + i];
            if z > 0 {
                let t = s - space.strides[i];
                if t != 0 {
                    *a.at(t, s) -= mu[i] * f64::from(z);
                }
            }
        }
    }
    let mut rhs = vec![0.0; space.len];
    rhs[0] = out[0];
    let mut pi = a.solve(rhs)?;
    let mass: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p = (*p / mass).max(0.0);
    }
    let mass: f64 = pi.iter().sum();
    for p in pi.iter_mut() {
        *p /= mass;
    }

    // Residual of the full generator, and moments.
    let mut flow = vec![0.0; space.len];
    let mut tail = 0.0;
    let mut ex = vec![0.0; types];
    let mut ez = vec![0.0; types];
    let mut qp = 0.0;
    for s in 0..space.len {
        space.decode(s, &mut x);
        let p = pi[s];
        flow[s] -= out[s] * p;
        let mut need_total = 0u64;
        let mut at_cap = false;
        for i in 0..types {
            let z = z_all[s * types + i];
            if x[i] < caps[i] {
                flow[s + space.strides[i]] += lambda[i] * p;
            } else {
                at_cap = true;
            }
            if z > 0 {
                flow[s - space.strides[i]] += mu[i] * f64::from(z) * p;
            }
            ex[i] += p * f64::from(x[i]);
            ez[i] += p * f64::from(z);
            need_total += u64::from(x[i]) * u64::from(needs[i]);
        }
        if at_cap {
            tail += p;
        }
        if need_total >= u64::from(config.n()) {
            qp += p;
        }
    }
    let residual = flow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let q: Vec<f64> = ex.iter().zip(&ez).map(|(a, b)| a - b).collect();
    let weight: Vec<f64> = needs.iter().zip(&mu).map(|(&l, &m)| f64::from(l) / m).collect();
    let workload = (0..types).map(|i| weight[i] * q[i]).sum();
    let normalized_work = (0..types).map(|i| weight[i] * (ex[i] - lambda[i] / mu[i])).sum();
    let lambda_total: f64 = lambda.iter().sum();
    let moments = StationaryMoments {
        mean_wait_per_type: q.iter().zip(&lambda).map(|(a, b)| a / b).collect(),
        mean_wait: q.iter().sum::<f64>() / lambda_total,
        x: ex,
        z: ez,
        q,
        workload,
        normalized_work,
        queueing_probability: qp,
    };
    Ok(StationarySolution {
        caps: caps.to_vec(),
        pi,
        tail_mass_bound: tail,
        residual,
        moments,
        certified: tail < TAIL_TARGET && residual < RESIDUAL_TARGET,
    })
}
