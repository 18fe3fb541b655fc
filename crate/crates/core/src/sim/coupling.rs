use crate::model::SystemConfig;
use crate::policies::PolicyKind;

use super::{JobOutcome, SimError, SimResult, SystemSpec};

/// The bounding triple `[lower, original, upper]`: Modified-FCFS on
/// `n + l_max` servers, FCFS on `n`, Modified-FCFS on `n`.
pub fn sandwich_systems(config: &SystemConfig) -> [SystemSpec; 3] {
    let n = config.n();
    [
        SystemSpec::new(PolicyKind::ModifiedFcfs, n + config.l_max()),
        SystemSpec::new(PolicyKind::Fcfs, n),
        SystemSpec::new(PolicyKind::ModifiedFcfs, n),
    ]
}

/// `W_lower(k) <= W(k) <= W_upper(k)` for every job, compared exactly.
pub fn check_sandwich(lower: &SimResult, original: &SimResult, upper: &SimResult) -> Result<bool, SimError> {
    let k = original.jobs.len();
    for other in [lower, upper] {
        if other.jobs.len() != k {
            return Err(SimError::LengthMismatch(other.jobs.len(), k));
        }
    }
    Ok(original
        .jobs
        .iter()
        .zip(&lower.jobs)
        .zip(&upper.jobs)
        .all(|((o, l), u)| l.wait <= o.wait && o.wait <= u.wait))
}

/// Per-type `X_inf(t) <= X(t)` at every event epoch of either system.
///
/// Both counts are reconstructed from per-job arrival and departure times;
/// all events sharing a timestamp are applied before comparing.
pub fn check_infinite_server_dominance(infinite: &SimResult, finite: &SimResult) -> Result<bool, SimError> {
    if infinite.jobs.len() != finite.jobs.len() {
        return Err(SimError::LengthMismatch(infinite.jobs.len(), finite.jobs.len()));
    }
    Ok(dominated(&infinite.jobs, &finite.jobs, infinite.num_types.max(finite.num_types)))
}

pub(crate) fn dominated(lower: &[JobOutcome], upper: &[JobOutcome], types: usize) -> bool {
    // (time, system, type, +1/-1)
    let mut events: Vec<(f64, usize, usize, i64)> = Vec::with_capacity(4 * lower.len());
    for (system, jobs) in [lower, upper].into_iter().enumerate() {
        for j in jobs {
            events.push((j.arrival, system, j.type_index as usize, 1));
            events.push((j.departure, system, j.type_index as usize, -1));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut counts = vec![[0i64; 2]; types];
    let mut k = 0;
    while k < events.len() {
        let t = events[k].0;
        while k < events.len() && events[k].0 == t {
            let (_, system, ty, delta) = events[k];
            counts[ty][system] += delta;
            k += 1;
        }
        if counts.iter().any(|c| c[0] > c[1]) {
            return false;
        }
    }
    true
}
