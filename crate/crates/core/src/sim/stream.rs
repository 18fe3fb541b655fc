use serde::{Deserialize, Serialize};

use crate::model::SystemConfig;
use crate::rng::{CounterRng, StreamRole};

use super::SimError;

/// A realization of the arrival process shared by coupled systems.
///
/// Job `k` arrives at `arrivals[k]`, has type `types[k]` and a unit-rate
/// service draw `unit_service[k]`; its service time in any system is
/// `unit_service[k] / mu[types[k]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStream {
    pub seed: u64,
    pub arrival_rates: Vec<f64>,
    pub arrivals: Vec<f64>,
    pub unit_service: Vec<f64>,
    pub types: Vec<u16>,
}

impl JobStream {
    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    pub fn lambda_total(&self) -> f64 {
        self.arrival_rates.iter().sum()
    }

    /// The first `k` jobs of this stream.
    pub fn truncated(&self, k: usize) -> JobStream {
        let k = k.min(self.len());
        JobStream {
            seed: self.seed,
            arrival_rates: self.arrival_rates.clone(),
            arrivals: self.arrivals[..k].to_vec(),
            unit_service: self.unit_service[..k].to_vec(),
            types: self.types[..k].to_vec(),
        }
    }
}

/// Draw `jobs` arrivals for `config` from `seed`.
pub fn build_job_stream(seed: u64, jobs: usize, config: &SystemConfig) -> Result<JobStream, SimError> {
    if jobs == 0 {
        return Err(SimError::EmptyStream);
    }
    let rates: Vec<f64> = config.types().iter().map(|t| t.arrival_rate).collect();
    let lambda: f64 = rates.iter().sum();
    let mut cumulative = Vec::with_capacity(rates.len());
    let mut acc = 0.0;
    for r in &rates {
        acc += r / lambda;
        cumulative.push(acc);
    }
    let last = rates.len() - 1;

    let mut gaps = CounterRng::new(seed, StreamRole::Interarrival);
    let mut service = CounterRng::new(seed, StreamRole::Service);
    let mut kinds = CounterRng::new(seed, StreamRole::JobType);

    let mut arrivals = Vec::with_capacity(jobs);
    let mut unit_service = Vec::with_capacity(jobs);
    let mut types = Vec::with_capacity(jobs);
    let mut t = 0.0f64;
    for _ in 0..jobs {
        let next = t + gaps.next_exp(lambda);
        // Keep arrival times strictly increasing even if a gap underflows.
        t = if next > t { next } else { t.next_up() };
        arrivals.push(t);
        unit_service.push(service.next_exp(1.0));
        let u = kinds.next_open01();
        let ty = cumulative.iter().position(|&c| u <= c).unwrap_or(last);
        types.push(ty as u16);
    }
    Ok(JobStream { seed, arrival_rates: rates, arrivals, unit_service, types })
}
