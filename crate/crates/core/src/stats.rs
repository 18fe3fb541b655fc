//! Steady-state estimation by batch means.
//!
//! Per-job samples are split into contiguous batches of equal job count
//! (leading remainder dropped); time averages are split into batches of equal
//! simulated time. The confidence interval is Student-t on the batch means
//! with `batches - 1` degrees of freedom.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::sim::SimResult;

pub const DEFAULT_BATCHES: usize = 20;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 batches, got {0}")]
    TooFewBatches(usize),
    #[error("{samples} samples cannot fill {batches} batches")]
    NotEnoughData { samples: usize, batches: usize },
    #[error("empty or reversed time window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeansEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub batches: usize,
    pub confidence: f64,
    pub per_batch: Vec<f64>,
}

impl BatchMeansEstimate {
    pub fn from_batch_means(per_batch: Vec<f64>) -> Result<Self, StatsError> {
        Self::with_confidence(per_batch, DEFAULT_CONFIDENCE)
    }

    pub fn with_confidence(per_batch: Vec<f64>, confidence: f64) -> Result<Self, StatsError> {
        let b = per_batch.len();
        if b < 2 {
            return Err(StatsError::TooFewBatches(b));
        }
        let mean = per_batch.iter().sum::<f64>() / b as f64;
        let var = per_batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
        let half_width = t_quantile(b - 1, confidence) * (var / b as f64).sqrt();
        Ok(Self { mean, half_width, batches: b, confidence, per_batch })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower() <= value && value <= self.upper()
    }

    /// Standard error of the mean implied by the batch variance.
    pub fn std_error(&self) -> f64 {
        if self.half_width == 0.0 {
            return 0.0;
        }
        self.half_width / t_quantile(self.batches - 1, self.confidence)
    }
}

/// Two-sided Student-t quantile at `confidence` with `df` degrees of freedom.
pub fn t_quantile(df: usize, confidence: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    dist.inverse_cdf(0.5 + confidence / 2.0)
}

/// Batch means over per-observation samples.
pub fn batch_means(samples: &[f64], batches: usize) -> Result<BatchMeansEstimate, StatsError> {
    if batches < 2 {
        return Err(StatsError::TooFewBatches(batches));
    }
    if samples.len() < batches {
        return Err(StatsError::NotEnoughData { samples: samples.len(), batches });
    }
    let size = samples.len() / batches;
    let skip = samples.len() - size * batches;
    let per_batch = samples[skip..].chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    BatchMeansEstimate::from_batch_means(per_batch)
}

/// Accumulates integrals of piecewise-constant signals over equal-time
/// batches of a window.
#[derive(Debug, Clone)]
pub struct BatchIntegrator {
    start: f64,
    end: f64,
    batches: usize,
    dims: usize,
    current: usize,
    current_end: f64,
    sums: Vec<f64>,
}

impl BatchIntegrator {
    pub fn new(start: f64, end: f64, batches: usize, dims: usize) -> Result<Self, StatsError> {
        if batches < 2 {
            return Err(StatsError::TooFewBatches(batches));
        }
        if !(end > start) {
            return Err(StatsError::EmptyWindow { start, end });
        }
        let mut it = Self { start, end, batches, dims, current: 0, current_end: 0.0, sums: vec![0.0; batches * dims] };
        it.current_end = it.boundary(1);
        Ok(it)
    }

    fn boundary(&self, j: usize) -> f64 {
        if j >= self.batches {
            self.end
        } else {
            self.start + (self.end - self.start) * j as f64 / self.batches as f64
        }
    }

    pub fn window(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    /// Add `values` held constant over `[a, b)`. Calls must come in
    /// nondecreasing time order.
    pub fn add(&mut self, a: f64, b: f64, values: &[f64]) {
        debug_assert_eq!(values.len(), self.dims);
        let mut a = a.max(self.start);
        let b = b.min(self.end);
        while a < b {
            while a >= self.current_end && self.current + 1 < self.batches {
                self.current += 1;
                self.current_end = self.boundary(self.current + 1);
            }
            let stop = if self.current + 1 == self.batches { b } else { b.min(self.current_end) };
            let dt = stop - a;
            let row = &mut self.sums[self.current * self.dims..(self.current + 1) * self.dims];
            for (s, v) in row.iter_mut().zip(values) {
                *s += dt * v;
            }
            a = stop;
        }
    }

    /// Per-dimension lists of batch time averages.
    pub fn averages(&self) -> Vec<Vec<f64>> {
        let widths: Vec<f64> = (0..self.batches).map(|j| self.boundary(j + 1) - self.boundary(j)).collect();
        (0..self.dims)
            .map(|d| (0..self.batches).map(|j| self.sums[j * self.dims + d] / widths[j]).collect())
            .collect()
    }
}

/// Batch means of a piecewise-constant signal: `values[k]` holds on
/// `[times[k], times[k+1])`, the last value until the window end, and
/// `initial` before `times[0]`.
pub fn time_weighted_batch_means(
    times: &[f64],
    values: &[f64],
    initial: f64,
    window: (f64, f64),
    batches: usize,
) -> Result<BatchMeansEstimate, StatsError> {
    if times.len() != values.len() {
        return Err(StatsError::LengthMismatch { times: times.len(), values: values.len() });
    }
    let mut it = BatchIntegrator::new(window.0, window.1, batches, 1)?;
    let mut t = f64::NEG_INFINITY;
    let mut v = initial;
    for (&tk, &vk) in times.iter().zip(values) {
        it.add(t, tk, &[v]);
        t = tk;
        v = vk;
    }
    it.add(t, window.1, &[v]);
    BatchMeansEstimate::from_batch_means(it.averages().swap_remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitingTimeReport {
    pub overall: BatchMeansEstimate,
    /// `None` when a type has too few measured jobs to fill the batches.
    pub per_type: Vec<Option<BatchMeansEstimate>>,
    pub samples: usize,
    pub per_type_samples: Vec<usize>,
    /// Plain average of every measured wait.
    pub sample_mean: f64,
    /// `(1 / lambda_hat) * sum_i lambda_hat_i * mean_i`, from the same data.
    pub lambda_weighted_mean: f64,
}

pub fn mean_waiting_time(result: &SimResult, batches: usize) -> Result<WaitingTimeReport, StatsError> {
    let measured = result.measured_jobs();
    let waits: Vec<f64> = measured.iter().map(|j| j.wait).collect();
    let overall = batch_means(&waits, batches)?;
    let types = result.num_types;
    let mut per_type_waits = vec![Vec::new(); types];
    for j in measured {
        per_type_waits[j.type_index as usize].push(j.wait);
    }
    let span = result.window.1 - result.window.0;
    let mut weighted = 0.0;
    let mut rate_total = 0.0;
    for w in &per_type_waits {
        if w.is_empty() {
            continue;
        }
        let rate = w.len() as f64 / span;
        weighted += rate * (w.iter().sum::<f64>() / w.len() as f64);
        rate_total += rate;
    }
    Ok(WaitingTimeReport {
        sample_mean: waits.iter().sum::<f64>() / waits.len() as f64,
        lambda_weighted_mean: weighted / rate_total,
        samples: waits.len(),
        per_type_samples: per_type_waits.iter().map(Vec::len).collect(),
        per_type: per_type_waits.iter().map(|w| batch_means(w, batches).ok()).collect(),
        overall,
    })
}

/// Time-average of `1{sum l_i X_i >= n}`. By PASTA this is also the fraction
/// of arrivals that find the servers unable to take every job present.
pub fn queueing_probability(result: &SimResult) -> BatchMeansEstimate {
    result.time_averages.queueing.estimate()
}
