//! System configurations, derived scaling parameters, and finite-n checks of
//! the traffic assumptions.
//!
//! A [`SystemConfig`] is `n` servers plus an ordered list of job types, each
//! with a Poisson arrival rate, an exponential service rate and a server
//! need. Types are kept in nondecreasing order of server need, so type
//! `I - 1` (zero-based) always carries the maximal need `l_max`.
//!
//! All logarithms are natural except the `floor(log2 n)` server need used by
//! the two reference parameter sets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("configuration has no job types")]
    NoTypes,
    #[error("server count must be at least 1")]
    NoServers,
    #[error("type {index}: arrival rate must be positive and finite, got {value}")]
    BadArrivalRate { index: usize, value: f64 },
    #[error("type {index}: service rate must be positive and finite, got {value}")]
    BadServiceRate { index: usize, value: f64 },
    #[error("type {index}: server need must be at least 1")]
    ZeroNeed { index: usize },
    #[error("server needs must be nondecreasing; type {index} has need {need} after {previous}")]
    UnsortedNeeds { index: usize, need: u32, previous: u32 },
    #[error("maximal server need {l_max} exceeds the server count {n}")]
    NeedExceedsServers { l_max: u32, n: u32 },
    #[error("system is overloaded: slack capacity {delta} is not positive")]
    Overloaded { delta: f64 },
    #[error("parameter sets need n >= 64, got {0}")]
    ParamSetTooSmall(u32),
    #[error("regime exponents out of range: alpha={alpha}, gamma={gamma}")]
    BadRegime { alpha: f64, gamma: f64 },
    #[error("invalid regime template: {0}")]
    BadTemplate(String),
    #[error("back-solved arrival rate for type {index} is not positive ({value})")]
    NonPositiveRate { index: usize, value: f64 },
}

/// One job class: Poisson arrivals, exponential service, fixed server need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobTypeSpec {
    #[serde(rename = "lambda")]
    pub arrival_rate: f64,
    #[serde(rename = "mu")]
    pub service_rate: f64,
    #[serde(rename = "l")]
    pub server_need: u32,
}

impl JobTypeSpec {
    pub fn new(arrival_rate: f64, service_rate: f64, server_need: u32) -> Self {
        Self { arrival_rate, service_rate, server_need }
    }

    /// Mean number of busy servers this type contributes, `lambda * l / mu`.
    pub fn offered_servers(&self) -> f64 {
        self.arrival_rate * f64::from(self.server_need) / self.service_rate
    }
}

#[derive(Deserialize)]
struct RawConfig {
    n: u32,
    types: Vec<JobTypeSpec>,
}

/// A validated multiserver-job system.
///
/// Serializes as `{"n": .., "types": [{"lambda": .., "mu": .., "l": ..}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct SystemConfig {
    n: u32,
    types: Vec<JobTypeSpec>,
}

impl TryFrom<RawConfig> for SystemConfig {
    type Error = ModelError;

    fn try_from(raw: RawConfig) -> Result<Self, Self::Error> {
        SystemConfig::new(raw.n, raw.types)
    }
}

impl SystemConfig {
    pub fn new(n: u32, types: Vec<JobTypeSpec>) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::NoServers);
        }
        if types.is_empty() {
            return Err(ModelError::NoTypes);
        }
        let mut previous = 0;
        for (index, t) in types.iter().enumerate() {
            if !(t.arrival_rate > 0.0 && t.arrival_rate.is_finite()) {
                return Err(ModelError::BadArrivalRate { index, value: t.arrival_rate });
            }
            if !(t.service_rate > 0.0 && t.service_rate.is_finite()) {
                return Err(ModelError::BadServiceRate { index, value: t.service_rate });
            }
            if t.server_need == 0 {
                return Err(ModelError::ZeroNeed { index });
            }
            if t.server_need < previous {
                return Err(ModelError::UnsortedNeeds { index, need: t.server_need, previous });
            }
            previous = t.server_need;
        }
        if previous > n {
            return Err(ModelError::NeedExceedsServers { l_max: previous, n });
        }
        let delta = f64::from(n) - types.iter().map(JobTypeSpec::offered_servers).sum::<f64>();
        if !(delta > 0.0) {
            return Err(ModelError::Overloaded { delta });
        }
        Ok(Self { n, types })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn types(&self) -> &[JobTypeSpec] {
        &self.types
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn needs(&self) -> Vec<u32> {
        self.types.iter().map(|t| t.server_need).collect()
    }

    pub fn l_max(&self) -> u32 {
        self.types.last().map_or(0, |t| t.server_need)
    }

    pub fn lambda_total(&self) -> f64 {
        self.types.iter().map(|t| t.arrival_rate).sum()
    }

    /// Same job types on a different number of servers.
    pub fn with_servers(&self, n: u32) -> Result<Self, ModelError> {
        Self::new(n, self.types.clone())
    }
}

/// Slack capacity, work variability, loads, and the subsystem sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub n: u32,
    pub delta: f64,
    pub sigma2: f64,
    pub rho: Vec<f64>,
    pub l_max: u32,
    pub lambda_total: f64,
    /// `sub_delta[i] = n - sum_{j<=i} lambda_j l_j / mu_j`
    pub sub_delta: Vec<f64>,
    /// `sub_sigma2[i] = sum_{j<=i} lambda_j l_j^2 / mu_j^2`
    pub sub_sigma2: Vec<f64>,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl DerivedParams {
    pub fn num_types(&self) -> usize {
        self.rho.len()
    }

    pub fn log_n(&self) -> f64 {
        f64::from(self.n).ln()
    }
}

pub fn derive_params(config: &SystemConfig) -> DerivedParams {
    let n = f64::from(config.n);
    let mut sub_delta = Vec::with_capacity(config.num_types());
    let mut sub_sigma2 = Vec::with_capacity(config.num_types());
    let mut offered = 0.0;
    let mut variability = 0.0;
    for t in &config.types {
        let l = f64::from(t.server_need);
        offered += t.offered_servers();
        variability += t.arrival_rate * l * l / (t.service_rate * t.service_rate);
        sub_delta.push(n - offered);
        sub_sigma2.push(variability);
    }
    let rho = config.types.iter().map(|t| t.offered_servers() / n).collect();
    let mu_min = config.types.iter().map(|t| t.service_rate).fold(f64::INFINITY, f64::min);
    let mu_max = config.types.iter().map(|t| t.service_rate).fold(0.0, f64::max);
    DerivedParams {
        n: config.n,
        delta: n - offered,
        sigma2: variability,
        rho,
        l_max: config.l_max(),
        lambda_total: config.lambda_total(),
        sub_delta,
        sub_sigma2,
        mu_min,
        mu_max,
    }
}

/// The two reference parameter families used in the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSet {
    One,
    Two,
}

impl std::fmt::Display for ParamSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ParamSet::One => "one",
            ParamSet::Two => "two",
        })
    }
}

impl std::str::FromStr for ParamSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "one" | "1" => Ok(ParamSet::One),
            "two" | "2" => Ok(ParamSet::Two),
            other => Err(format!("unknown parameter set '{other}' (expected one|two)")),
        }
    }
}

fn isqrt(n: u32) -> u32 {
    let mut r = f64::from(n).sqrt() as u32;
    while u64::from(r) * u64::from(r) > u64::from(n) {
        r -= 1;
    }
    while u64::from(r + 1) * u64::from(r + 1) <= u64::from(n) {
        r += 1;
    }
    r
}

/// Parameter Set One or Two at `n` servers.
///
/// Service rates are `(0.25, 0.5, 1)`, needs `(1, floor(log2 n), floor(sqrt n))`
/// and the target slack is `2 floor(sqrt n)`. Set One splits the load evenly;
/// Set Two gives the largest type load `n^-0.3`.
pub fn make_param_set(which: ParamSet, n: u32) -> Result<SystemConfig, ModelError> {
    if n < 64 {
        return Err(ModelError::ParamSetTooSmall(n));
    }
    let mu = [0.25, 0.5, 1.0];
    let needs = [1, 31 - n.leading_zeros(), isqrt(n)];
    let nf = f64::from(n);
    let delta = 2.0 * f64::from(needs[2]);
    let busy = nf - delta;
    // Offered servers per type, `rho_i * n`.
    let offered = match which {
        ParamSet::One => [busy / 3.0; 3],
        ParamSet::Two => {
            let top = nf.powf(0.7);
            let low = (busy - top) / 2.0;
            [low, low, top]
        }
    };
    let mut types = Vec::with_capacity(3);
    for (index, ((&m, &l), &o)) in mu.iter().zip(&needs).zip(&offered).enumerate() {
        let lambda = o * m / f64::from(l);
        if !(lambda > 0.0) {
            return Err(ModelError::NonPositiveRate { index, value: lambda });
        }
        types.push(JobTypeSpec::new(lambda, m, l));
    }
    SystemConfig::new(n, types)
}

/// Shape of a parameterized scaling family: everything except `n`, `alpha`
/// and `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTemplate {
    pub service_rates: Vec<f64>,
    /// Fraction of the busy servers `n - delta` offered by each type.
    pub load_split: Vec<f64>,
    /// `l_i = max(1, round(n^(gamma * e_i)))`; the last exponent must be 1 so
    /// that `l_max = round(n^gamma)`.
    pub need_exponents: Vec<f64>,
}

impl RegimeTemplate {
    /// A single type with service rate `mu`.
    pub fn single(mu: f64) -> Self {
        Self { service_rates: vec![mu], load_split: vec![1.0], need_exponents: vec![1.0] }
    }
}

/// Config with `l_max = round(n^gamma)` and slack exactly `n^alpha`.
///
/// Requires `0 <= gamma <= alpha < 1`. The boundary `gamma == alpha` is
/// accepted because families such as Parameter Set One (`l_max = delta / 2`)
/// sit on it with a constant factor to spare.
pub fn make_regime_config(
    n: u32,
    alpha: f64,
    gamma: f64,
    template: &RegimeTemplate,
) -> Result<SystemConfig, ModelError> {
    let in_unit = |v: f64| (0.0..1.0).contains(&v);
    if !in_unit(alpha) || !in_unit(gamma) || gamma > alpha {
        return Err(ModelError::BadRegime { alpha, gamma });
    }
    let k = template.service_rates.len();
    if k == 0 || template.load_split.len() != k || template.need_exponents.len() != k {
        return Err(ModelError::BadTemplate("vectors must be nonempty and of equal length".into()));
    }
    if template.load_split.iter().any(|&s| !(s > 0.0)) {
        return Err(ModelError::BadTemplate("load shares must be positive".into()));
    }
    if template.need_exponents.windows(2).any(|w| w[1] < w[0])
        || template.need_exponents.iter().any(|e| !(0.0..=1.0).contains(e))
        || template.need_exponents[k - 1] != 1.0
    {
        return Err(ModelError::BadTemplate(
            "need exponents must be nondecreasing in [0, 1] and end at 1".into(),
        ));
    }
    let nf = f64::from(n);
    let delta = nf.powf(alpha);
    let share_total: f64 = template.load_split.iter().sum();
    let types = (0..k)
        .map(|i| {
            let l = nf.powf(gamma * template.need_exponents[i]).round().max(1.0) as u32;
            let offered = (nf - delta) * template.load_split[i] / share_total;
            let mu = template.service_rates[i];
            let lambda = offered * mu / f64::from(l);
            if !(lambda > 0.0) {
                return Err(ModelError::NonPositiveRate { index: i, value: lambda });
            }
            Ok(JobTypeSpec::new(lambda, mu, l))
        })
        .collect::<Result<Vec<_>, _>>()?;
    SystemConfig::new(n, types)
}

/// Thresholds for the finite-n assumption proxies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionThresholds {
    pub epsilon0: f64,
    /// Heavy traffic holds iff `delta log n / sqrt(sigma2) <= a1_max`.
    pub a1_max: f64,
    /// Commonness holds iff the normalized top-type load is `>= a3_min`.
    pub a3_min: f64,
}

impl Default for AssumptionThresholds {
    fn default() -> Self {
        Self { epsilon0: 0.9, a1_max: 1.0, a3_min: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    pub heavy_traffic: bool,
    pub max_need: bool,
    pub commonness: bool,
}

impl AssumptionFlags {
    pub fn all(&self) -> bool {
        self.heavy_traffic && self.max_need && self.commonness
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1_ratio: f64,
    pub a2_ratio: f64,
    pub a3_ratio: f64,
    pub thresholds: AssumptionThresholds,
    pub holds: AssumptionFlags,
}

pub fn check_assumptions(config: &SystemConfig, thresholds: AssumptionThresholds) -> AssumptionReport {
    let p = derive_params(config);
    let log_n = p.log_n();
    let nf = f64::from(p.n);
    let l_max = f64::from(p.l_max);
    let a1_ratio = p.delta * log_n / p.sigma2.sqrt();
    let a2_ratio = l_max / p.delta;
    let rho_top = *p.rho.last().expect("validated config has types");
    let a3_ratio = rho_top / ((a1_ratio * l_max / nf).sqrt() * log_n);
    AssumptionReport {
        a1_ratio,
        a2_ratio,
        a3_ratio,
        thresholds,
        holds: AssumptionFlags {
            heavy_traffic: a1_ratio <= thresholds.a1_max,
            max_need: l_max <= thresholds.epsilon0 * p.delta,
            commonness: a3_ratio >= thresholds.a3_min,
        },
    }
}

/// Zero-based critical indices. A `*_fallback` flag means no type satisfied
/// the proxy and the index defaulted to the last type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalIndices {
    pub i_star: usize,
    pub i_star_fallback: bool,
    pub i_star_1: usize,
    pub i_star_1_fallback: bool,
}

pub fn critical_indices(config: &SystemConfig) -> CriticalIndices {
    critical_indices_of(&derive_params(config), &config.needs())
}

pub(crate) fn critical_indices_of(p: &DerivedParams, needs: &[u32]) -> CriticalIndices {
    let last = p.num_types() - 1;
    let log_n = p.log_n();
    let nf = f64::from(p.n);
    let heavy = (0..=last).find(|&i| p.sub_delta[i] <= p.sub_sigma2[i].sqrt() / log_n);
    let moderate =
        (0..=last).find(|&i| p.sub_delta[i] <= (nf * f64::from(needs[i])).sqrt() * log_n);
    CriticalIndices {
        i_star: heavy.unwrap_or(last),
        i_star_fallback: heavy.is_none(),
        i_star_1: moderate.unwrap_or(last),
        i_star_1_fallback: moderate.is_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm2() -> SystemConfig {
        SystemConfig::new(2, vec![JobTypeSpec::new(1.0, 1.0, 1)]).unwrap()
    }

    #[test]
    fn set_one_at_64() {
        let c = make_param_set(ParamSet::One, 64).unwrap();
        let lambdas: Vec<f64> = c.types().iter().map(|t| t.arrival_rate).collect();
        assert_eq!(c.needs(), vec![1, 6, 8]);
        assert!((lambdas[0] - 4.0).abs() < 1e-12);
        assert!((lambdas[1] - 4.0 / 3.0).abs() < 1e-12);
        assert!((lambdas[2] - 2.0).abs() < 1e-12);
        let p = derive_params(&c);
        assert!((p.delta - 16.0).abs() < 1e-12);
        assert!((p.sigma2 - 384.0).abs() < 1e-9);
        for r in &p.rho {
            assert!((r - 0.25).abs() < 1e-12);
        }
        assert!((p.lambda_total - 22.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.l_max, 8);
    }

    #[test]
    fn set_one_at_1024() {
        let c = make_param_set(ParamSet::One, 1024).unwrap();
        assert_eq!(c.needs(), vec![1, 10, 32]);
        assert!((derive_params(&c).delta - 64.0).abs() < 1e-9);
    }

    #[test]
    fn set_two_top_load() {
        let c = make_param_set(ParamSet::Two, 1024).unwrap();
        let p = derive_params(&c);
        assert!((p.rho[2] - 1024f64.powf(-0.3)).abs() < 1e-12);
        // 1024^-0.3 = 2^-3
        assert!((p.rho[2] - 0.125).abs() < 1e-12);
        assert!((p.delta - 64.0).abs() < 1e-9);
    }

    #[test]
    fn param_set_rejects_small_n() {
        assert_eq!(make_param_set(ParamSet::One, 32), Err(ModelError::ParamSetTooSmall(32)));
    }

    #[test]
    fn mm2_half_load() {
        let p = derive_params(&mm2());
        assert_eq!(p.delta, 1.0);
        assert_eq!(p.sigma2, 1.0);
        assert_eq!(p.rho, vec![0.5]);
    }

    #[test]
    fn zero_arrival_rate_rejected() {
        let err = SystemConfig::new(4, vec![JobTypeSpec::new(0.0, 1.0, 1)]).unwrap_err();
        assert!(matches!(err, ModelError::BadArrivalRate { index: 0, .. }));
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            SystemConfig::new(4, vec![JobTypeSpec::new(1.0, 1.0, 5)]),
            Err(ModelError::NeedExceedsServers { l_max: 5, n: 4 })
        ));
        assert!(matches!(
            SystemConfig::new(4, vec![JobTypeSpec::new(1.0, 1.0, 2), JobTypeSpec::new(1.0, 1.0, 1)]),
            Err(ModelError::UnsortedNeeds { index: 1, .. })
        ));
        assert!(matches!(
            SystemConfig::new(2, vec![JobTypeSpec::new(2.0, 1.0, 1)]),
            Err(ModelError::Overloaded { .. })
        ));
        assert!(matches!(SystemConfig::new(2, vec![]), Err(ModelError::NoTypes)));
    }

    #[test]
    fn config_json_field_names() {
        let json = r#"{"n": 4, "types": [{"lambda": 0.5, "mu": 1.0, "l": 4}]}"#;
        let c: SystemConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.n(), 4);
        assert_eq!(c.types()[0], JobTypeSpec::new(0.5, 1.0, 4));
        let back = serde_json::to_value(&c).unwrap();
        assert_eq!(back["types"][0]["l"], 4);
        assert_eq!(back["types"][0]["lambda"], 0.5);
        let bad = r#"{"n": 1, "types": [{"lambda": 0.5, "mu": 1.0, "l": 4}]}"#;
        assert!(serde_json::from_str::<SystemConfig>(bad).is_err());
    }

    #[test]
    fn regime_halfin_whitt_analogue() {
        let c = make_regime_config(256, 0.5, 0.0, &RegimeTemplate::single(1.0)).unwrap();
        assert_eq!(c.needs(), vec![1]);
        assert!((c.types()[0].arrival_rate - 240.0).abs() < 1e-9);
        assert!((derive_params(&c).delta - 16.0).abs() < 1e-9);
    }

    #[test]
    fn regime_on_the_diagonal() {
        let c = make_regime_config(256, 0.5, 0.5, &RegimeTemplate::single(1.0)).unwrap();
        assert_eq!(c.l_max(), 16);
        assert!((derive_params(&c).delta - 16.0).abs() < 1e-9);
    }

    #[test]
    fn regime_rejects_gamma_above_alpha() {
        assert!(matches!(
            make_regime_config(256, 0.25, 0.5, &RegimeTemplate::single(1.0)),
            Err(ModelError::BadRegime { .. })
        ));
        assert!(make_regime_config(256, 1.0, 0.0, &RegimeTemplate::single(1.0)).is_err());
    }

    #[test]
    fn assumptions_set_one() {
        let c = make_param_set(ParamSet::One, 64).unwrap();
        let r = check_assumptions(&c, AssumptionThresholds::default());
        assert_eq!(r.a2_ratio, 0.5);
        assert!(r.holds.max_need);
        // Set One only enters the heavy-traffic proxy region at astronomically
        // large n: at n = 4096 the ratio is about 3.05.
        let big = make_param_set(ParamSet::One, 4096).unwrap();
        let r = check_assumptions(&big, AssumptionThresholds::default());
        let p = derive_params(&big);
        let expected = 128.0 * 4096f64.ln() / p.sigma2.sqrt();
        assert!((r.a1_ratio - expected).abs() < 1e-12);
        assert!((r.a1_ratio - 3.05).abs() < 0.01);
        assert!(!r.holds.heavy_traffic);
    }

    #[test]
    fn assumptions_mm2() {
        let r = check_assumptions(&mm2(), AssumptionThresholds { epsilon0: 0.5, ..Default::default() });
        assert_eq!(r.a2_ratio, 1.0);
        assert!(!r.holds.max_need);
    }

    #[test]
    fn critical_index_fallback_set_one() {
        let c = make_param_set(ParamSet::One, 64).unwrap();
        let p = derive_params(&c);
        assert_eq!(p.sub_delta.iter().map(|d| d.round()).collect::<Vec<_>>(), vec![48.0, 32.0, 16.0]);
        let thresholds: Vec<f64> = p.sub_sigma2.iter().map(|s| s.sqrt() / 64f64.ln()).collect();
        assert!((thresholds[0] - 1.92).abs() < 0.01);
        assert!((thresholds[1] - 3.85).abs() < 0.01);
        assert!((thresholds[2] - 4.71).abs() < 0.01);
        let ci = critical_indices(&c);
        assert_eq!(ci.i_star, 2);
        assert!(ci.i_star_fallback);
    }

    #[test]
    fn critical_index_single_heavy_type() {
        // delta = 0.1, sigma2 ~ 99.9: delta log n / sqrt(sigma2) ~ 0.05
        let c = SystemConfig::new(100, vec![JobTypeSpec::new(99.9, 1.0, 1)]).unwrap();
        assert!(check_assumptions(&c, AssumptionThresholds::default()).holds.heavy_traffic);
        let ci = critical_indices(&c);
        assert_eq!(ci.i_star, 0);
        assert!(!ci.i_star_fallback);
    }
}
