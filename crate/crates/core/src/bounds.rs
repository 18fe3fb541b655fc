//! Leading-order bounds evaluated at a concrete configuration.
//!
//! Every value is the leading term with its `1 +/- o(1)` factor dropped, so
//! comparisons against simulation are only meaningful when the assumption
//! proxies in the report hold. Entries whose finite-n preconditions fail are
//! reported as [`Bound::Absent`] with a reason instead of a number.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    check_assumptions, critical_indices_of, derive_params, AssumptionReport, AssumptionThresholds,
    CriticalIndices, DerivedParams, SystemConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("weight vector has {got} entries, expected {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("weights must be finite and nonnegative")]
    NegativeWeight,
    #[error("tail threshold must be finite and nonnegative, got {0}")]
    NegativeThreshold(f64),
    #[error("alpha * beta = {product} is below c_max^2 mu_max sigma^2 = {required}")]
    LinearTailPrecondition { product: f64, required: f64 },
    #[error("regime needs 0 <= gamma <= alpha <= (1 + gamma) / 2 and alpha < 1, got alpha={alpha}, gamma={gamma}")]
    Regime { alpha: f64, gamma: f64 },
}

/// A bound value, or the reason it cannot be evaluated at this config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Value(f64),
    Absent(String),
}

impl Bound {
    pub fn value(&self) -> Option<f64> {
        match self {
            Bound::Value(v) => Some(*v),
            Bound::Absent(_) => None,
        }
    }

    fn positive_gap(gap: f64, numerator: f64, what: &str) -> Bound {
        if gap > 0.0 {
            Bound::Value(numerator / gap)
        } else {
            Bound::Absent(format!("{what} = {gap} is not positive"))
        }
    }
}

/// Which case of the general SNF bound applies to a type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnfCase {
    /// `i >= i*`: explicit leading term.
    Heavy,
    /// `i*_1 <= i < i*`: order term `sqrt(sigma2_i) log n / (lambda_i l_i)`.
    Moderate,
    /// `i < i*_1`: decays like `exp(-Omega(exponent))`; only the exponent is reported.
    Light,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnfTypeBound {
    pub case: SnfCase,
    /// Mean-wait bound for the type; absent for the light case.
    pub wait: Bound,
    /// `delta_i^2 / (n l_i)`, reported for every type.
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnfGeneralBound {
    pub per_type: Vec<SnfTypeBound>,
    /// Heavy-case sum plus moderate-case order terms, each divided by `lambda`.
    pub mean: Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: u32,
    pub delta: f64,
    pub sigma2: f64,
    pub delta_prime: f64,
    /// `sigma2 / delta`
    pub workload_lower: Bound,
    /// `sigma2 / (delta - delta')`
    pub workload_upper: Bound,
    /// `sigma2 / (n (delta + l_max))`
    pub fcfs_wait_lower: Bound,
    /// `sigma2 / (n (delta - l_max))`
    pub fcfs_wait_upper: Bound,
    /// `max_{i >= i*} mu_min sigma2_i / (lambda l_i delta_i)`
    pub universal_lower: Bound,
    /// Zero-based index attaining `universal_lower`.
    pub universal_lower_argmax: usize,
    /// `sum_{i >= i*} mu_max sigma2_i / (lambda l_i (delta_i - l_i))`
    pub snf_upper: Bound,
    pub snf_general: SnfGeneralBound,
    /// `delta^2 / (n l_max)`, the decay exponent of the queueing probability.
    pub qp_exponent: f64,
    pub assumptions: AssumptionReport,
    pub indices: CriticalIndices,
}

pub fn evaluate_bounds(config: &SystemConfig, delta_prime: f64) -> BoundReport {
    evaluate_bounds_with(config, delta_prime, AssumptionThresholds::default())
}

pub fn evaluate_bounds_with(config: &SystemConfig, delta_prime: f64, thresholds: AssumptionThresholds) -> BoundReport {
    let p = derive_params(config);
    let needs = config.needs();
    let indices = critical_indices_of(&p, &needs);
    let nf = f64::from(p.n);
    let l_max = f64::from(p.l_max);

    let (universal_lower_argmax, universal) = universal_terms(&p, &needs, indices.i_star)
        .into_iter()
        .fold((indices.i_star, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });

    BoundReport {
        n: p.n,
        delta: p.delta,
        sigma2: p.sigma2,
        delta_prime,
        workload_lower: Bound::Value(p.sigma2 / p.delta),
        workload_upper: Bound::positive_gap(p.delta - delta_prime, p.sigma2, "delta - delta'"),
        fcfs_wait_lower: Bound::Value(p.sigma2 / (nf * (p.delta + l_max))),
        fcfs_wait_upper: Bound::positive_gap(nf * (p.delta - l_max), p.sigma2, "n (delta - l_max)"),
        universal_lower: Bound::Value(universal),
        universal_lower_argmax,
        snf_upper: snf_upper(&p, &needs, indices.i_star),
        snf_general: snf_general(config, &p, &needs, &indices),
        qp_exponent: p.delta * p.delta / (nf * l_max),
        assumptions: check_assumptions(config, thresholds),
        indices,
    }
}

/// Per-index terms `mu_min sigma2_i / (lambda l_i delta_i)` for `i >= from`.
pub(crate) fn universal_terms(p: &DerivedParams, needs: &[u32], from: usize) -> Vec<(usize, f64)> {
    (from..p.num_types())
        .map(|i| (i, p.mu_min * p.sub_sigma2[i] / (p.lambda_total * f64::from(needs[i]) * p.sub_delta[i])))
        .collect()
}

fn heavy_term(p: &DerivedParams, needs: &[u32], i: usize) -> Result<f64, String> {
    let l = f64::from(needs[i]);
    let gap = p.sub_delta[i] - l;
    if gap > 0.0 {
        Ok(p.mu_max * p.sub_sigma2[i] / (l * gap))
    } else {
        Err(format!("delta_{} - l_{} = {gap} is not positive", i + 1, i + 1))
    }
}

fn snf_upper(p: &DerivedParams, needs: &[u32], i_star: usize) -> Bound {
    let mut total = 0.0;
    for i in i_star..p.num_types() {
        match heavy_term(p, needs, i) {
            Ok(v) => total += v,
            Err(reason) => return Bound::Absent(reason),
        }
    }
    Bound::Value(total / p.lambda_total)
}

fn snf_general(config: &SystemConfig, p: &DerivedParams, needs: &[u32], ix: &CriticalIndices) -> SnfGeneralBound {
    let nf = f64::from(p.n);
    let mut heavy_sum = Some(0.0);
    let mut heavy_absent = None;
    let mut moderate_sum = 0.0;
    let per_type = (0..p.num_types())
        .map(|i| {
            let l = f64::from(needs[i]);
            let lambda_i = config.types()[i].arrival_rate;
            let exponent = p.sub_delta[i] * p.sub_delta[i] / (nf * l);
            if i >= ix.i_star {
                let wait = match heavy_term(p, needs, i) {
                    Ok(v) => {
                        heavy_sum = heavy_sum.map(|s| s + v);
                        Bound::Value(v / lambda_i)
                    }
                    Err(reason) => {
                        heavy_sum = None;
                        heavy_absent.get_or_insert_with(|| reason.clone());
                        Bound::Absent(reason)
                    }
                };
                SnfTypeBound { case: SnfCase::Heavy, wait, exponent }
            } else if i >= ix.i_star_1 {
                let term = p.sub_sigma2[i].sqrt() * p.log_n() / l;
                moderate_sum += term;
                SnfTypeBound { case: SnfCase::Moderate, wait: Bound::Value(term / lambda_i), exponent }
            } else {
                SnfTypeBound {
                    case: SnfCase::Light,
                    wait: Bound::Absent("only the decay exponent is defined".into()),
                    exponent,
                }
            }
        })
        .collect();
    let mean = match heavy_sum {
        Some(h) => Bound::Value((h + moderate_sum) / p.lambda_total),
        None => Bound::Absent(heavy_absent.unwrap_or_default()),
    };
    SnfGeneralBound { per_type, mean }
}

fn tail_scale(config: &SystemConfig, c: &[f64]) -> Result<f64, BoundsError> {
    if c.len() != config.num_types() {
        return Err(BoundsError::WeightLength { got: c.len(), expected: config.num_types() });
    }
    if c.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(BoundsError::NegativeWeight);
    }
    let p = derive_params(config);
    let c_max = c.iter().copied().fold(0.0, f64::max);
    Ok(c_max * c_max * p.mu_max * p.sigma2)
}

/// Left-tail bound for `Phi = sum_i c_i l_i (X_i - lambda_i / mu_i)` in the
/// infinite-server system: `P(Phi <= -k) <= exp(-k^2 / (2 c_max^2 mu_max sigma2))`.
pub fn mminf_tail(config: &SystemConfig, c: &[f64], k: f64) -> Result<f64, BoundsError> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(BoundsError::NegativeThreshold(k));
    }
    let scale = tail_scale(config, c)?;
    if scale == 0.0 {
        return Ok(if k > 0.0 { 0.0 } else { 1.0 });
    }
    Ok((-k * k / (2.0 * scale)).exp())
}

/// `P(Phi <= -alpha - beta j) <= exp(-j)`, valid when
/// `alpha beta >= c_max^2 mu_max sigma2`.
pub fn mminf_tail_linear(config: &SystemConfig, c: &[f64], alpha: f64, beta: f64, j: f64) -> Result<f64, BoundsError> {
    let required = tail_scale(config, c)?;
    if !(alpha >= 0.0 && beta >= 0.0) || alpha * beta < required {
        return Err(BoundsError::LinearTailPrecondition { product: alpha * beta, required });
    }
    if !(j >= 0.0) {
        return Err(BoundsError::NegativeThreshold(j));
    }
    Ok((-j).exp())
}

/// `E[Phi^-] <= sqrt(c_max^2 mu_max sigma2)`.
pub fn mminf_negative_part_mean(config: &SystemConfig, c: &[f64]) -> Result<f64, BoundsError> {
    Ok(tail_scale(config, c)?.sqrt())
}

/// Growth orders for `l_max = n^gamma`, `delta = n^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corollary2Orders {
    pub fcfs_exponent: f64,
    pub lower_exponent: f64,
    pub snf_exponent: f64,
    /// `n^(gamma - alpha)`
    pub fcfs: f64,
    /// `n^(-alpha)`
    pub lower: f64,
    /// `n^(-alpha)`
    pub snf: f64,
    /// Strict inequalities `gamma < alpha < (1 + gamma) / 2` hold.
    pub interior: bool,
}

pub fn corollary2_orders(n: u32, alpha: f64, gamma: f64) -> Result<Corollary2Orders, BoundsError> {
    let ok = gamma >= 0.0 && gamma <= alpha && alpha <= (1.0 + gamma) / 2.0 && alpha < 1.0;
    if !ok {
        return Err(BoundsError::Regime { alpha, gamma });
    }
    let nf = f64::from(n);
    Ok(Corollary2Orders {
        fcfs_exponent: gamma - alpha,
        lower_exponent: -alpha,
        snf_exponent: -alpha,
        fcfs: nf.powf(gamma - alpha),
        lower: nf.powf(-alpha),
        snf: nf.powf(-alpha),
        interior: gamma < alpha && alpha < (1.0 + gamma) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_param_set, JobTypeSpec, ParamSet};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn set_one_at_64() {
        let c = make_param_set(ParamSet::One, 64).unwrap();
        let r = evaluate_bounds(&c, 8.0);
        assert!(close(r.workload_lower.value().unwrap(), 24.0, 1e-12));
        assert!(close(r.workload_upper.value().unwrap(), 48.0, 1e-12));
        assert!(close(r.fcfs_wait_lower.value().unwrap(), 0.25, 1e-12));
        assert!(close(r.fcfs_wait_upper.value().unwrap(), 0.75, 1e-12));
        assert_eq!(r.indices.i_star, 2);
        assert!(r.indices.i_star_fallback);
        assert!(close(r.snf_upper.value().unwrap(), 3.0 / 22.0 * 384.0 / 64.0, 1e-12));
        assert!((r.snf_upper.value().unwrap() - 0.8182).abs() < 1e-4);
        // mu_min = 0.25, sigma2_3 = 384, l_3 = 8, delta_3 = 16
        assert!(close(r.universal_lower.value().unwrap(), 3.0 / 22.0 * 0.25 * 384.0 / 128.0, 1e-12));
        assert_eq!(r.universal_lower_argmax, 2);
        assert!(close(r.qp_exponent, 256.0 / 512.0, 1e-12));
    }

    #[test]
    fn mm2_universal_lower_outside_regime() {
        let c = SystemConfig::new(2, vec![JobTypeSpec::new(1.0, 1.0, 1)]).unwrap();
        let r = evaluate_bounds(&c, 1.0);
        assert!(close(r.universal_lower.value().unwrap(), 1.0, 1e-12));
        assert!(!r.assumptions.holds.max_need);
        assert!(matches!(r.workload_upper, Bound::Absent(_)));
        assert!(matches!(r.fcfs_wait_upper, Bound::Absent(_)));
    }

    #[test]
    fn absent_entries_round_trip() {
        let c = SystemConfig::new(10, vec![JobTypeSpec::new(1.0, 1.0, 1), JobTypeSpec::new(0.5, 1.0, 8)]).unwrap();
        let r = evaluate_bounds(&c, 8.0);
        assert!(matches!(r.snf_upper, Bound::Absent(_)));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"absent\""));
        let back: BoundReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn tail_bounds() {
        let c = make_param_set(ParamSet::One, 64).unwrap();
        let weights: Vec<f64> = c.types().iter().map(|t| 1.0 / t.service_rate).collect();
        assert_eq!(mminf_tail(&c, &weights, 0.0).unwrap(), 1.0);
        let v = mminf_tail(&c, &weights, 100.0).unwrap();
        assert!(close(v, (-10_000.0f64 / (2.0 * 16.0 * 384.0)).exp(), 1e-12));
        assert!((v - 0.4432).abs() < 1e-4);
        let m = mminf_negative_part_mean(&c, &weights).unwrap();
        assert!((m - (16.0f64 * 384.0).sqrt()).abs() < 1e-9 && (m - 78.38).abs() < 1e-2);
        let req = 16.0 * 384.0;
        assert!(close(mminf_tail_linear(&c, &weights, 100.0, req / 100.0, 2.0).unwrap(), (-2.0f64).exp(), 1e-15));
        assert!(matches!(
            mminf_tail_linear(&c, &weights, 10.0, 10.0, 1.0),
            Err(BoundsError::LinearTailPrecondition { .. })
        ));
        assert!(mminf_tail(&c, &[1.0, -1.0, 1.0], 1.0).is_err());
        assert!(mminf_tail(&c, &[1.0], 1.0).is_err());
        assert!(mminf_tail(&c, &weights, -1.0).is_err());
    }

    #[test]
    fn regime_order_exponents() {
        let o = corollary2_orders(4096, 0.5, 0.5).unwrap();
        assert_eq!(o.fcfs, 1.0);
        assert!(close(o.snf, 1.0 / 64.0, 1e-12));
        assert!(!o.interior);
        let hw = corollary2_orders(4096, 0.5, 0.0).unwrap();
        assert_eq!(hw.fcfs_exponent, -0.5);
        assert!(!hw.interior);
        assert!(corollary2_orders(4096, 0.4, 0.1).unwrap().interior);
        assert!(corollary2_orders(4096, 0.25, 0.5).is_err());
        assert!(corollary2_orders(4096, 0.9, 0.1).is_err());
    }

    #[test]
    fn general_snf_cases() {
        let c = make_param_set(ParamSet::One, 4096).unwrap();
        let r = evaluate_bounds(&c, f64::from(c.l_max()));
        let g = &r.snf_general;
        assert_eq!(g.per_type.len(), 3);
        for (i, t) in g.per_type.iter().enumerate() {
            let expected = if i >= r.indices.i_star {
                SnfCase::Heavy
            } else if i >= r.indices.i_star_1 {
                SnfCase::Moderate
            } else {
                SnfCase::Light
            };
            assert_eq!(t.case, expected);
        }
        // With i*_1 = i*, the general mean reduces to the main SNF bound.
        if r.indices.i_star_1 >= r.indices.i_star {
            assert!(close(g.mean.value().unwrap(), r.snf_upper.value().unwrap(), 1e-12));
        } else {
            assert!(g.mean.value().unwrap() > r.snf_upper.value().unwrap());
        }
    }

    fn config_strategy() -> impl Strategy<Value = (Vec<(f64, f64, u32)>, u32)> {
        (1usize..=3)
            .prop_flat_map(|k| {
                (
                    proptest::collection::vec((0.05f64..1.0, 0.25f64..2.0, 1u32..=6), k),
                    0.3f64..0.9,
                    40u32..400,
                )
            })
            .prop_map(|(mut types, load, n)| {
                types.sort_by_key(|t| t.2);
                let weight: f64 = types.iter().map(|t| t.0).sum();
                let specs = types
                    .iter()
                    .map(|&(share, mu, l)| (share / weight * load * f64::from(n) * mu / f64::from(l), mu, l))
                    .collect();
                (specs, n)
            })
    }

    fn build(types: &[(f64, f64, u32)], n: u32, scale: u32) -> SystemConfig {
        let s = f64::from(scale);
        SystemConfig::new(n * scale, types.iter().map(|&(lam, mu, l)| JobTypeSpec::new(lam * s, mu, l)).collect())
            .unwrap()
    }

    proptest! {
        #[test]
        fn bound_orderings((types, n) in config_strategy()) {
            let c = build(&types, n, 1);
            let r = evaluate_bounds(&c, f64::from(c.l_max()));
            if let (Some(lo), Some(hi)) = (r.workload_lower.value(), r.workload_upper.value()) {
                prop_assert!(lo < hi);
            }
            if let (Some(lo), Some(hi)) = (r.fcfs_wait_lower.value(), r.fcfs_wait_upper.value()) {
                prop_assert!(lo <= hi);
            }
            let p = derive_params(&c);
            let finite = (r.indices.i_star..c.num_types()).all(|i| p.sub_delta[i] > f64::from(c.needs()[i]));
            prop_assert_eq!(r.snf_upper.value().is_some(), finite);
            if let Some(snf) = r.snf_upper.value() {
                let u = r.universal_lower.value().unwrap();
                prop_assert!(u <= snf * p.mu_max / p.mu_min * c.num_types() as f64 * (1.0 + 1e-12));
            }
            let back: BoundReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn universal_terms_scale_free((types, n) in config_strategy(), scale in 2u32..16) {
            let a = build(&types, n, 1);
            let b = build(&types, n, scale);
            let (pa, pb) = (derive_params(&a), derive_params(&b));
            let ta = universal_terms(&pa, &a.needs(), 0);
            let tb = universal_terms(&pb, &b.needs(), 0);
            // Each term scales by exactly 1/scale, so the maximizer only moves
            // if the critical index itself moves.
            for ((_, x), (_, y)) in ta.iter().zip(&tb) {
                prop_assert!(close(*x, *y * f64::from(scale), 1e-9));
            }
            let (ra, rb) = (evaluate_bounds(&a, 0.0), evaluate_bounds(&b, 0.0));
            if ra.indices.i_star == rb.indices.i_star {
                prop_assert_eq!(ra.universal_lower_argmax, rb.universal_lower_argmax);
            }
        }
    }
}
