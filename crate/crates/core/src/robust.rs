//! Worst-case quantiles and coverage over an LP ambiguity ball, and the
//! robust prediction sets built from them.
//!
//! For a reference distribution `P` and radii `(epsilon, rho)` the largest
//! `beta`-quantile over the ball is `Quant(beta + rho; P) + epsilon`, and the
//! smallest CDF value at `q` is `F_P(q - epsilon) - rho`. Calibrating at level
//! `1 - alpha` with these closed forms gives the robust threshold.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp_metric::{check_epsilon, LpParams};
use crate::sample::{ceil_snap, Level, ScoreSample, Threshold, ThresholdResult};

fn check_alpha(alpha: Level) -> Result<f64> {
    let a = alpha.value();
    if a <= 0.0 || a >= 1.0 {
        return Err(Error::domain(format!("alpha {a} must lie in (0, 1)")));
    }
    Ok(a)
}

fn check_n(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("sample size must be positive"));
    }
    Ok(n as f64)
}

/// Largest `beta`-quantile over the ball around `sample`.
///
/// Unbounded when `beta + rho > 1`: mass can then be pushed arbitrarily far.
pub fn worst_case_quantile(
    sample: &ScoreSample,
    beta: Level,
    params: LpParams,
) -> Result<ThresholdResult> {
    if beta.value() <= 0.0 {
        return Err(Error::domain("quantile level must be positive"));
    }
    let level = beta.value() + params.rho();
    Ok(ThresholdResult::from_level(sample, level, params.epsilon()))
}

/// Smallest probability that a member of the ball assigns to `(-inf, q]`.
pub fn worst_case_coverage(sample: &ScoreSample, q: f64, params: LpParams) -> Result<Level> {
    if !q.is_finite() {
        return Err(Error::domain(format!("threshold {q} is not finite")));
    }
    Ok(Level::saturating(
        sample.cdf(q - params.epsilon()) - params.rho(),
    ))
}

/// Robust split-conformal threshold at miscoverage `alpha`.
///
/// The coverage bound is attached when `rho < 1`.
pub fn robust_threshold(
    sample: &ScoreSample,
    alpha: Level,
    params: LpParams,
) -> Result<ThresholdResult> {
    let a = check_alpha(alpha)?;
    let r = worst_case_quantile(sample, Level::saturating(1.0 - a), params)?;
    let bound = coverage_lower_bound(sample.len(), alpha, Level::saturating(params.rho())).ok();
    Ok(r.with_bound(bound.map(Level::value)))
}

/// Finite-sample coverage guarantee of [`robust_threshold`] under test
/// distributions in the ball: `ceil(n(1 - alpha + rho)) / (n + 1) - rho`,
/// clamped to `[0, 1]`.
pub fn coverage_lower_bound(n: usize, alpha: Level, rho: Level) -> Result<Level> {
    let nf = check_n(n)?;
    let a = check_alpha(alpha)?;
    let r = rho.value();
    if r >= 1.0 {
        return Err(Error::domain("rho must be below 1"));
    }
    let k = ceil_snap(nf * (1.0 - a + r));
    Ok(Level::saturating(k / (nf + 1.0) - r))
}

/// Miscoverage level that makes [`robust_threshold`] deliver `1 - alpha`
/// coverage at sample size `n`: `alpha + (alpha - rho - 2) / n`.
pub fn adjusted_beta(n: usize, alpha: Level, rho: Level) -> Result<Level> {
    let nf = check_n(n)?;
    let a = check_alpha(alpha)?;
    let beta = a + (a - rho.value() - 2.0) / nf;
    if beta <= 0.0 || beta >= 1.0 {
        return Err(Error::Infeasible(format!(
            "adjusted level {beta} for n = {n}, alpha = {a}, rho = {} is outside (0, 1)",
            rho.value()
        )));
    }
    Ok(Level::saturating(beta))
}

fn corrected_level(n: usize, alpha: Level, rho: f64) -> Result<f64> {
    let nf = check_n(n)?;
    let a = check_alpha(alpha)?;
    let level = 1.0 - ((a - rho) * (nf + 1.0) - 2.0) / nf;
    if level <= 0.0 || ceil_snap(level * nf) > nf {
        return Err(Error::Infeasible(format!(
            "quantile level {level} for n = {n}, alpha = {a}, rho = {rho} is outside (0, 1]"
        )));
    }
    Ok(level)
}

/// Corrected threshold for a total-variation ball (`epsilon = 0`).
pub fn tv_threshold(sample: &ScoreSample, alpha: Level, rho: Level) -> Result<ThresholdResult> {
    let level = corrected_level(sample.len(), alpha, rho.value())?;
    let bound = adjusted_beta(sample.len(), alpha, rho)
        .and_then(|b| coverage_lower_bound(sample.len(), b, rho))
        .ok();
    Ok(ThresholdResult::from_level(sample, level, 0.0).with_bound(bound.map(Level::value)))
}

/// Corrected threshold for an `infinity`-Wasserstein ball (`rho = 0`).
pub fn winf_threshold(sample: &ScoreSample, alpha: Level, epsilon: f64) -> Result<ThresholdResult> {
    check_epsilon(epsilon)?;
    let level = corrected_level(sample.len(), alpha, 0.0)?;
    let bound = adjusted_beta(sample.len(), alpha, Level::ZERO)
        .and_then(|b| coverage_lower_bound(sample.len(), b, Level::ZERO))
        .ok();
    Ok(ThresholdResult::from_level(sample, level, epsilon).with_bound(bound.map(Level::value)))
}

/// Labels whose score passes a threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSet {
    pub member_labels: Vec<usize>,
    pub threshold: Threshold,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.member_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_labels.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.member_labels.binary_search(&label).is_ok()
    }
}

pub fn prediction_set(label_scores: &[f64], threshold: Threshold) -> PredictionSet {
    let member_labels = label_scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| threshold.admits(s))
        .map(|(y, _)| y)
        .collect();
    PredictionSet {
        member_labels,
        threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(x: f64) -> Level {
        Level::new(x).unwrap()
    }

    fn p(eps: f64, rho: f64) -> LpParams {
        LpParams::new(eps, rho).unwrap()
    }

    fn tenths() -> ScoreSample {
        ScoreSample::new((1..=10).map(|i| i as f64 / 10.0).collect()).unwrap()
    }

    fn percent() -> ScoreSample {
        ScoreSample::new((1..=100).map(|i| i as f64 / 100.0).collect()).unwrap()
    }

    #[test]
    fn worst_case_quantile_examples() {
        let r = worst_case_quantile(&tenths(), lv(0.8), p(0.05, 0.1)).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(0.9 + 0.05));
        let r = worst_case_quantile(&tenths(), lv(0.35), p(0.0, 0.0)).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(0.4));
        let r = worst_case_quantile(&tenths(), lv(0.95), p(0.0, 0.1)).unwrap();
        assert!(r.threshold.is_unbounded());
    }

    #[test]
    fn level_one_boundary_is_finite() {
        let r = worst_case_quantile(&tenths(), lv(0.9), p(0.5, 0.1)).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(1.0 + 0.5));
    }

    #[test]
    fn worst_case_coverage_examples() {
        let s = ScoreSample::from_slice(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(worst_case_coverage(&s, 2.0, p(0.0, 0.0)).unwrap().value(), 0.5);
        assert_eq!(worst_case_coverage(&s, 2.5, p(0.5, 0.25)).unwrap().value(), 0.25);
        assert_eq!(worst_case_coverage(&s, 0.0, p(1.0, 0.5)).unwrap().value(), 0.0);
        assert!(worst_case_coverage(&s, f64::NAN, p(1.0, 0.5)).is_err());
    }

    #[test]
    fn robust_threshold_examples() {
        let r = robust_threshold(&percent(), lv(0.1), p(0.02, 0.05)).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(0.95 + 0.02));
        let r = robust_threshold(&percent(), lv(0.1), p(0.0, 0.0)).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(0.9));
        let r = robust_threshold(&percent(), lv(0.05), p(0.0, 0.95)).unwrap();
        assert!(r.threshold.is_unbounded());
        assert!(robust_threshold(&percent(), lv(0.0), p(0.0, 0.0)).is_err());
    }

    #[test]
    fn coverage_bound_examples() {
        let b = coverage_lower_bound(1000, lv(0.1), lv(0.05)).unwrap().value();
        assert!((b - (950.0 / 1001.0 - 0.05)).abs() < 1e-15);
        let b = coverage_lower_bound(1000, lv(0.1), lv(0.0)).unwrap().value();
        assert_eq!(b, 900.0 / 1001.0);
        assert_eq!(coverage_lower_bound(1, lv(0.5), lv(0.0)).unwrap().value(), 0.5);
        assert!(coverage_lower_bound(0, lv(0.5), lv(0.0)).is_err());
    }

    #[test]
    fn adjusted_beta_examples() {
        let b = adjusted_beta(1000, lv(0.1), lv(0.05)).unwrap().value();
        assert!((b - 0.09805).abs() < 1e-15);
        let b = adjusted_beta(1_000_000, lv(0.1), lv(0.0)).unwrap().value();
        assert!((b - 0.0999981).abs() < 1e-15);
        assert!(matches!(
            adjusted_beta(10, lv(0.1), lv(0.05)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn tv_threshold_examples() {
        let x = ScoreSample::new((1..=1000).map(f64::from).collect()).unwrap();
        let r = tv_threshold(&x, lv(0.1), lv(0.05)).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(952.0));
        let beta = adjusted_beta(1000, lv(0.1), lv(0.05)).unwrap();
        let composed = robust_threshold(&x, beta, p(0.0, 0.05)).unwrap();
        assert_eq!(r.threshold, composed.threshold);
        assert!(matches!(
            tv_threshold(&x, lv(0.001), lv(0.0)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn winf_threshold_examples() {
        let x = ScoreSample::new((1..=1000).map(f64::from).collect()).unwrap();
        let r = winf_threshold(&x, lv(0.1), 0.3).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(902.0 + 0.3));
        let zero = winf_threshold(&x, lv(0.1), 0.0).unwrap();
        assert_eq!(zero.threshold, tv_threshold(&x, lv(0.1), lv(0.0)).unwrap().threshold);
    }

    #[test]
    fn prediction_set_examples() {
        let s = prediction_set(&[0.2, 0.9, 0.4], Threshold::Finite(0.5));
        assert_eq!(s.member_labels, vec![0, 2]);
        assert!(s.contains(2) && !s.contains(1));
        assert_eq!(prediction_set(&[0.2, 0.9], Threshold::Unbounded).len(), 2);
        assert!(prediction_set(&[0.2, 0.9], Threshold::Finite(0.1)).is_empty());
    }

    proptest! {
        #[test]
        fn quantile_monotone_in_all_arguments(
            xs in prop::collection::vec(-10.0f64..10.0, 1..60),
            b in 0.01f64..0.99, db in 0.0f64..0.2,
            r in 0.0f64..0.5, dr in 0.0f64..0.2,
            e in 0.0f64..1.0, de in 0.0f64..1.0,
        ) {
            let s = ScoreSample::new(xs).unwrap();
            let base = worst_case_quantile(&s, lv(b), p(e, r)).unwrap().threshold;
            let bigger = [
                worst_case_quantile(&s, lv((b + db).min(1.0)), p(e, r)).unwrap().threshold,
                worst_case_quantile(&s, lv(b), p(e, (r + dr).min(1.0))).unwrap().threshold,
                worst_case_quantile(&s, lv(b), p(e + de, r)).unwrap().threshold,
            ];
            for t in bigger {
                match (base, t) {
                    (Threshold::Finite(x), Threshold::Finite(y)) => prop_assert!(x <= y),
                    (Threshold::Unbounded, t) => prop_assert!(t.is_unbounded()),
                    _ => {}
                }
            }
        }

        #[test]
        fn coverage_monotone_and_clamped(
            xs in prop::collection::vec(-10.0f64..10.0, 1..60),
            q in -12.0f64..12.0, dq in 0.0f64..2.0,
            r in 0.0f64..1.0, dr in 0.0f64..0.5,
            e in 0.0f64..2.0, de in 0.0f64..2.0,
        ) {
            let s = ScoreSample::new(xs).unwrap();
            let c = worst_case_coverage(&s, q, p(e, r)).unwrap().value();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(worst_case_coverage(&s, q, p(e + de, r)).unwrap().value() <= c);
            prop_assert!(worst_case_coverage(&s, q, p(e, (r + dr).min(1.0))).unwrap().value() <= c);
            prop_assert!(worst_case_coverage(&s, q + dq, p(e, r)).unwrap().value() >= c);
        }

        #[test]
        fn quantile_coverage_duality(
            xs in prop::collection::vec(-10i32..10, 1..60),
            b in 0.01f64..=1.0, r in 0.0f64..0.5, e in 0i32..4,
        ) {
            // Integer data and epsilon keep t - epsilon exact.
            let s = ScoreSample::new(xs.into_iter().map(f64::from).collect()).unwrap();
            let params = p(e as f64, r);
            if let Threshold::Finite(t) = worst_case_quantile(&s, lv(b), params).unwrap().threshold {
                prop_assert!(s.cdf(t - params.epsilon()) >= b + r - 1e-12);
                prop_assert!(worst_case_coverage(&s, t, params).unwrap().value() >= b - 1e-12);
            }
        }
    }
}
