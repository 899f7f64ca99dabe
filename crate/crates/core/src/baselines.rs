//! Comparison thresholds: split conformal, chi-squared robust, weighted
//! conformal under covariate shift, randomized-smoothing (RSCP) and
//! f-divergence weighted (FG) conformal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{conformal_quantile, Level, ScoreSample, ThresholdResult};

/// Slack on cumulative-weight comparisons, relative to the total weight.
const WEIGHT_SLACK: f64 = 1e-12;

/// Standard split-conformal threshold.
pub fn sc_threshold(sample: &ScoreSample, alpha: Level) -> Result<ThresholdResult> {
    conformal_quantile(sample, alpha)
}

fn check_rho_chi2(rho: f64) -> Result<()> {
    if rho.is_finite() && rho >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("chi-squared radius {rho} must be finite and >= 0")))
    }
}

/// Smallest `z` in `[0, 1]` with `(z - beta)^2 / (beta (1 - beta)) <= rho`.
///
/// `g(0) = 0` and `g(1) = 1`.
pub fn chi2_g(beta: Level, rho: f64) -> Result<Level> {
    check_rho_chi2(rho)?;
    let b = beta.value();
    if b == 0.0 || b == 1.0 {
        return Ok(beta);
    }
    Ok(Level::saturating(b - (rho * b * (1.0 - b)).sqrt()))
}

/// `sup { beta : g(beta) <= tau }`, by bisection.
pub fn chi2_g_inv(tau: Level, rho: f64) -> Result<Level> {
    check_rho_chi2(rho)?;
    let t = tau.value();
    if t >= 1.0 {
        return Ok(Level::ONE);
    }
    let g = |b: f64| chi2_g(Level::saturating(b), rho).map(Level::value);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Level::saturating(lo))
}

/// Chi-squared robust conformal threshold.
///
/// Queries the calibration quantile at `g^-1(g((1 + 1/n) g^-1(1 - alpha)))`;
/// unbounded when the inflated level `(1 + 1/n) g^-1(1 - alpha)` exceeds 1.
pub fn chi2_threshold(sample: &ScoreSample, alpha: Level, rho: f64) -> Result<ThresholdResult> {
    let a = alpha.value();
    if a <= 0.0 || a >= 1.0 {
        return Err(Error::domain("alpha must lie in (0, 1)"));
    }
    let n = sample.len() as f64;
    let inflated = (1.0 + 1.0 / n) * chi2_g_inv(Level::saturating(1.0 - a), rho)?.value();
    if inflated > 1.0 + 1e-12 {
        return Ok(ThresholdResult::unbounded(inflated, 0.0));
    }
    let alpha_n = chi2_g(Level::saturating(inflated), rho)?;
    let level = chi2_g_inv(alpha_n, rho)?.value();
    if level <= 0.0 {
        return Err(Error::domain("chi-squared level collapsed to 0"));
    }
    Ok(ThresholdResult::from_level(sample, level, 0.0))
}

/// Calibration scores with likelihood-ratio weights and the test point's weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedScores {
    scores: Vec<f64>,
    weights: Vec<f64>,
    test_weight: f64,
}

fn check_weight(w: f64) -> Result<()> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("weight {w} must be finite and positive")))
    }
}

impl WeightedScores {
    pub fn new(scores: Vec<f64>, weights: Vec<f64>, test_weight: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::domain("weighted sample must be nonempty"));
        }
        if scores.len() != weights.len() {
            return Err(Error::domain(format!(
                "{} scores but {} weights",
                scores.len(),
                weights.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::domain(format!("score {bad} is not finite")));
        }
        for &w in weights.iter().chain([&test_weight]) {
            check_weight(w)?;
        }
        Ok(Self {
            scores,
            weights,
            test_weight,
        })
    }

    /// Equal weights for every calibration point and the test point.
    pub fn uniform(sample: &ScoreSample) -> Self {
        Self {
            scores: sample.scores().to_vec(),
            weights: vec![1.0; sample.len()],
            test_weight: 1.0,
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn test_weight(&self) -> f64 {
        self.test_weight
    }
}

/// Calibration side of a weighted quantile, reusable across test weights.
#[derive(Debug, Clone)]
pub struct WeightedQuantiler {
    sorted: Vec<f64>,
    cumulative: Vec<f64>,
}

impl WeightedQuantiler {
    pub fn new(scores: &[f64], weights: &[f64]) -> Result<Self> {
        let ws = WeightedScores::new(scores.to_vec(), weights.to_vec(), 1.0)?;
        let mut pairs: Vec<(f64, f64)> = ws.scores.into_iter().zip(ws.weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(pairs.len());
        for &(_, w) in &pairs {
            acc += w;
            cumulative.push(acc);
        }
        Ok(Self {
            sorted: pairs.into_iter().map(|p| p.0).collect(),
            cumulative,
        })
    }

    /// Smallest score whose normalized cumulative weight reaches `level`,
    /// with a point mass of `test_weight` at `+inf`.
    pub fn quantile(&self, test_weight: f64, level: f64) -> Result<ThresholdResult> {
        check_weight(test_weight)?;
        let total = self.cumulative[self.cumulative.len() - 1] + test_weight;
        let need = level * total - WEIGHT_SLACK * total;
        let k = self.cumulative.partition_point(|&c| c < need);
        Ok(if k < self.sorted.len() {
            ThresholdResult::finite(self.sorted[k], level, 0.0)
        } else {
            ThresholdResult::unbounded(level, 0.0)
        })
    }
}

/// Weighted conformal threshold at level `1 - alpha`.
pub fn weighted_threshold(ws: &WeightedScores, alpha: Level) -> Result<ThresholdResult> {
    let a = alpha.value();
    if a <= 0.0 || a >= 1.0 {
        return Err(Error::domain("alpha must lie in (0, 1)"));
    }
    WeightedQuantiler::new(&ws.scores, &ws.weights)?.quantile(ws.test_weight, 1.0 - a)
}

/// Level used by [`fg_threshold`].
pub fn fg_level(alpha: Level, rho: f64) -> Result<f64> {
    let a = alpha.value();
    if a <= 0.0 || a >= 1.0 {
        return Err(Error::domain("alpha must lie in (0, 1)"));
    }
    Ok(chi2_g_inv(Level::saturating(1.0 - a), rho)?.value())
}

/// Weighted threshold at the robust level `g^-1(1 - alpha)`.
pub fn fg_threshold(ws: &WeightedScores, alpha: Level, rho: f64) -> Result<ThresholdResult> {
    let level = fg_level(alpha, rho)?;
    WeightedQuantiler::new(&ws.scores, &ws.weights)?.quantile(ws.test_weight, level)
}

/// RSCP threshold on smoothed scores: quantile at `(1 - alpha)(n + 2)/(n + 1)`
/// plus `delta / sigma`.
pub fn rscp_threshold(
    sample: &ScoreSample,
    alpha: Level,
    delta: f64,
    sigma: f64,
) -> Result<ThresholdResult> {
    let a = alpha.value();
    if a <= 0.0 || a >= 1.0 {
        return Err(Error::domain("alpha must lie in (0, 1)"));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain(format!("sigma {sigma} must be positive")));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::domain(format!("delta {delta} must be nonnegative")));
    }
    let n = sample.len() as f64;
    let level = (1.0 - a) * (2.0 + n) / (1.0 + n);
    Ok(ThresholdResult::from_level(sample, level, delta / sigma))
}

/// Reads `score,weight` rows, header required.
pub fn read_weighted<R: std::io::Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>)> {
    #[derive(Deserialize)]
    struct Row {
        score: f64,
        weight: f64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut scores = Vec::new();
    let mut weights = Vec::new();
    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("record {}: {e}", line + 1)))?;
        scores.push(row.score);
        weights.push(row.weight);
    }
    Ok((scores, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Threshold;
    use proptest::prelude::*;

    fn lv(x: f64) -> Level {
        Level::new(x).unwrap()
    }

    /// Smallest `z` on a uniform grid satisfying the divergence constraint.
    fn g_grid(beta: f64, rho: f64, step: f64) -> f64 {
        let steps = (1.0 / step).round() as usize;
        (0..=steps)
            .map(|i| i as f64 * step)
            .find(|&z| (z - beta).powi(2) / (beta * (1.0 - beta)) <= rho)
            .unwrap()
    }

    #[test]
    fn g_examples() {
        assert_eq!(chi2_g(lv(0.3), 0.0).unwrap().value(), 0.3);
        assert_eq!(chi2_g(lv(0.5), 1.0).unwrap().value(), 0.0);
        let g = chi2_g(lv(0.9), 0.04).unwrap().value();
        assert!((g - g_grid(0.9, 0.04, 1e-6)).abs() <= 2e-6);
        assert_eq!(chi2_g(Level::ZERO, 3.0).unwrap(), Level::ZERO);
        assert_eq!(chi2_g(Level::ONE, 3.0).unwrap(), Level::ONE);
        assert!(chi2_g(lv(0.5), -1.0).is_err());
    }

    #[test]
    fn g_inverse_examples() {
        for t in [0.1, 0.37, 0.9] {
            assert!((chi2_g_inv(lv(t), 0.0).unwrap().value() - t).abs() < 1e-15);
        }
        assert_eq!(chi2_g_inv(Level::ONE, 0.7).unwrap(), Level::ONE);
        for i in 1..=9 {
            let t = i as f64 / 10.0;
            let b = chi2_g_inv(lv(t), 0.2).unwrap().value();
            assert!(chi2_g(lv(b), 0.2).unwrap().value() <= t + 1e-12);
            // Maximality: a slightly larger level overshoots.
            assert!(chi2_g(lv((b + 1e-6).min(1.0)), 0.2).unwrap().value() > t);
        }
    }

    #[test]
    fn g_inverse_matches_closed_form_root() {
        for &(t, r) in &[(0.3f64, 0.1f64), (0.8, 0.5), (0.95, 0.01)] {
            let a = 2.0 * t + r;
            let root = (a + (a * a - 4.0 * (1.0 + r) * t * t).sqrt()) / (2.0 * (1.0 + r));
            assert!((chi2_g_inv(lv(t), r).unwrap().value() - root).abs() < 1e-12);
        }
    }

    #[test]
    fn chi2_threshold_examples() {
        let x = ScoreSample::new((1..=1000).map(f64::from).collect()).unwrap();
        let r = chi2_threshold(&x, lv(0.1), 0.0).unwrap();
        assert!((r.level_used - 0.9 * 1001.0 / 1000.0).abs() < 1e-12);
        assert_eq!(r.threshold, Threshold::Finite(901.0));
        // Large radius: the inflated level exceeds 1.
        assert!(chi2_threshold(&x, lv(0.1), 50.0).unwrap().threshold.is_unbounded());
        let small = ScoreSample::new((1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(
            chi2_threshold(&small, lv(0.1), 0.0).unwrap().threshold,
            sc_threshold(&small, lv(0.1)).unwrap().threshold
        );
    }

    #[test]
    fn weighted_examples() {
        let nine: Vec<f64> = (1..=9).map(f64::from).collect();
        let ws = WeightedScores::new(nine.clone(), vec![1.0; 9], 1.0).unwrap();
        assert_eq!(
            weighted_threshold(&ws, lv(0.1)).unwrap().threshold,
            Threshold::Finite(9.0)
        );
        let mut w = vec![1e-6; 9];
        w[4] = 1.0;
        let ws = WeightedScores::new(nine.clone(), w, 1e-6).unwrap();
        assert_eq!(
            weighted_threshold(&ws, lv(0.1)).unwrap().threshold,
            Threshold::Finite(5.0)
        );
        let ws = WeightedScores::new(nine.clone(), vec![1.0; 9], 1e6).unwrap();
        assert!(weighted_threshold(&ws, lv(0.1)).unwrap().threshold.is_unbounded());
        assert!(WeightedScores::new(nine.clone(), vec![0.0; 9], 1.0).is_err());
        assert!(WeightedScores::new(nine, vec![1.0; 8], 1.0).is_err());
    }

    #[test]
    fn fg_reduces_to_weighted_at_zero_radius() {
        let scores: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let ws = WeightedScores::new(scores, vec![1.0; 1000], 1.0).unwrap();
        assert_eq!(
            fg_threshold(&ws, lv(0.1), 0.0).unwrap().threshold,
            weighted_threshold(&ws, lv(0.1)).unwrap().threshold
        );
    }

    #[test]
    fn rscp_examples() {
        let x = ScoreSample::new((1..=1000).map(f64::from).collect()).unwrap();
        let r = rscp_threshold(&x, lv(0.1), 0.5, 0.25).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(901.0 + 2.0));
        let r = rscp_threshold(&x, lv(0.1), 0.0, 1.0).unwrap();
        assert_eq!(r.threshold, Threshold::Finite(901.0));
        let ten = ScoreSample::new((1..=10).map(f64::from).collect()).unwrap();
        assert!(rscp_threshold(&ten, lv(0.001), 0.0, 1.0).unwrap().threshold.is_unbounded());
        assert!(rscp_threshold(&ten, lv(0.1), 0.0, 0.0).is_err());
    }

    #[test]
    fn read_weighted_parses_columns() {
        let (s, w) = read_weighted("score,weight\n0.5,2\n0.1,1\n".as_bytes()).unwrap();
        assert_eq!(s, vec![0.5, 0.1]);
        assert_eq!(w, vec![2.0, 1.0]);
        assert!(read_weighted("score,weight\nx,1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn g_monotone_on_lattice(i in 1usize..50, j in 0usize..50) {
            let b = i as f64 / 50.0;
            let r = j as f64 / 25.0;
            let g = chi2_g(lv(b), r).unwrap().value();
            prop_assert!(chi2_g(lv(b + 0.02), r).unwrap().value() >= g);
            prop_assert!(chi2_g(lv(b), r + 0.04).unwrap().value() <= g);
        }

        #[test]
        fn g_round_trips(t in 0.0f64..=1.0, b in 0.0f64..=1.0, r in 0.0f64..2.0) {
            let inv = chi2_g_inv(lv(t), r).unwrap();
            prop_assert!(chi2_g(inv, r).unwrap().value() <= t + 1e-12);
            let gb = chi2_g(lv(b), r).unwrap();
            prop_assert!(chi2_g_inv(gb, r).unwrap().value() >= b - 1e-12);
        }

        #[test]
        fn uniform_weights_match_augmented_conformal(
            xs in prop::collection::vec(-10.0f64..10.0, 1..80),
            a in 0.01f64..0.99,
        ) {
            let s = ScoreSample::new(xs).unwrap();
            let w = weighted_threshold(&WeightedScores::uniform(&s), lv(a)).unwrap();
            let c = sc_threshold(&s, lv(a)).unwrap();
            prop_assert_eq!(w.threshold, c.threshold);
        }

        #[test]
        fn thresholds_grow_with_robustness(
            xs in prop::collection::vec(-10.0f64..10.0, 5..80),
            r in 0.0f64..1.0, dr in 0.0f64..1.0,
            d in 0.0f64..1.0, dd in 0.0f64..1.0,
        ) {
            let s = ScoreSample::new(xs).unwrap();
            let a = lv(0.2);
            let lo = chi2_threshold(&s, a, r).unwrap().threshold;
            let hi = chi2_threshold(&s, a, r + dr).unwrap().threshold;
            prop_assert!(lo.le(&hi));
            let lo = rscp_threshold(&s, a, d, 1.0).unwrap().threshold;
            let hi = rscp_threshold(&s, a, d + dd, 1.0).unwrap().threshold;
            prop_assert!(lo.le(&hi));
            let ws = WeightedScores::uniform(&s);
            let lo = fg_threshold(&ws, a, r).unwrap().threshold;
            let hi = fg_threshold(&ws, a, r + dr).unwrap().threshold;
            prop_assert!(lo.le(&hi));
        }
    }
}
