//! Constructive members of the LP ball.
//!
//! * [`perturb_sample`] draws from the local-plus-global perturbation model:
//!   each score is either displaced by at most `epsilon` or, with probability
//!   `rho`, replaced by a draw from a global law.
//! * [`wc_quantile_family`] and [`wc_coverage_family`] build the extremal
//!   distributions that nearly attain the worst-case quantile and coverage.
//!   They act on ranks: an `epsilon` shift of every atom, then a band of
//!   `floor(rho n)` consecutive atoms is lifted onto one order statistic.
//! * [`pushforward_check`] compares LP distances before and after a
//!   Lipschitz score map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp_metric::{lp_distance, lp_distance_dense, within, LpParams};
use crate::sample::{ceil_snap, floor_snap, Level, ScoreSample};

/// Law of the local displacement, supported on `[-epsilon, epsilon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalLaw {
    #[default]
    Uniform,
    PointMass { value: f64 },
}

/// Law of a replaced score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalLaw {
    PointMass { value: f64 },
    Uniform { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub rho: Level,
    pub local_law: LocalLaw,
    pub global_law: GlobalLaw,
    pub seed: u64,
}

impl PerturbationSpec {
    /// Uniform local noise and a point mass at `global_value`.
    pub fn new(epsilon: f64, rho: f64, global_value: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            epsilon,
            rho: Level::new(rho)?,
            local_law: LocalLaw::Uniform,
            global_law: GlobalLaw::PointMass {
                value: global_value,
            },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        LpParams::new(self.epsilon, self.rho.value())?;
        if let LocalLaw::PointMass { value } = self.local_law {
            if !value.is_finite() || value.abs() > self.epsilon {
                return Err(Error::domain(format!(
                    "local point mass {value} lies outside [-{0}, {0}]",
                    self.epsilon
                )));
            }
        }
        match self.global_law {
            GlobalLaw::PointMass { value } if !value.is_finite() => {
                Err(Error::domain("global point mass must be finite"))
            }
            GlobalLaw::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low <= high) => {
                Err(Error::domain("global uniform law needs finite low <= high"))
            }
            _ => Ok(()),
        }
    }

    pub fn params(&self) -> LpParams {
        // validate() has already accepted these values.
        LpParams::new(self.epsilon, self.rho.value()).expect("validated spec")
    }
}

/// Perturbed scores aligned with the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub scores: Vec<f64>,
    /// Which entries were replaced by a global draw.
    pub replaced: Vec<bool>,
}

impl Perturbed {
    pub fn replaced_fraction(&self) -> f64 {
        self.replaced.iter().filter(|&&r| r).count() as f64 / self.replaced.len() as f64
    }
}

/// Displaces `x` by `noise`, pulling the result back by ulps if rounding
/// pushed it past `epsilon`.
pub(crate) fn displace(x: f64, noise: f64, epsilon: f64) -> f64 {
    let mut y = x + noise;
    while !within(x, y, epsilon) {
        y = if y > x { y.next_down() } else { y.next_up() };
    }
    y
}

pub(crate) fn draw_local(rng: &mut impl Rng, law: LocalLaw, epsilon: f64) -> f64 {
    match law {
        LocalLaw::Uniform if epsilon > 0.0 => rng.random_range(-epsilon..=epsilon),
        LocalLaw::Uniform => 0.0,
        LocalLaw::PointMass { value } => value,
    }
}

pub(crate) fn draw_global(rng: &mut impl Rng, law: GlobalLaw) -> f64 {
    match law {
        GlobalLaw::PointMass { value } => value,
        GlobalLaw::Uniform { low, high } if high > low => rng.random_range(low..=high),
        GlobalLaw::Uniform { low, .. } => low,
    }
}

/// Applies the perturbation model to scores in the given order.
pub fn perturb_scores(scores: &[f64], spec: &PerturbationSpec) -> Result<Perturbed> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rho = spec.rho.value();
    let mut out = Vec::with_capacity(scores.len());
    let mut replaced = Vec::with_capacity(scores.len());
    for &x in scores {
        let global = rng.random::<f64>() < rho;
        // Both draws are always taken so the stream layout does not depend on rho.
        let local = draw_local(&mut rng, spec.local_law, spec.epsilon);
        let far = draw_global(&mut rng, spec.global_law);
        out.push(if global {
            far
        } else {
            displace(x, local, spec.epsilon)
        });
        replaced.push(global);
    }
    Ok(Perturbed {
        scores: out,
        replaced,
    })
}

/// Draws a perturbed copy of `base`. Deterministic given the seed.
pub fn perturb_sample(base: &ScoreSample, spec: &PerturbationSpec) -> Result<ScoreSample> {
    ScoreSample::new(perturb_scores(base.scores(), spec)?.scores)
}

fn band_size(n: usize, params: &LpParams) -> Result<usize> {
    let r = floor_snap(params.rho() * n as f64) as usize;
    if r == 0 && params.rho() > 0.0 {
        return Err(Error::domain(format!(
            "rho = {} moves no atom at n = {n}",
            params.rho()
        )));
    }
    Ok(r)
}

fn check_k(k: usize, n: usize, params: &LpParams) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::domain(format!("k = {k} must lie in 1..={n}")));
    }
    let inv = 1.0 / k as f64;
    if params.rho() > 0.0 && inv > params.rho() + 1e-12 {
        return Err(Error::domain(format!("1/k = {inv} exceeds rho = {}", params.rho())));
    }
    Ok(inv)
}

/// Shifts every atom by `epsilon` and lifts ranks `[top - r, top - 1]`
/// (1-indexed) onto the atom at rank `top`.
fn lift_band(base: &ScoreSample, epsilon: f64, top: usize, r: usize) -> Result<ScoreSample> {
    let mut ys: Vec<f64> = base.scores().iter().map(|x| x + epsilon).collect();
    if r > 0 {
        if top > ys.len() || top <= r {
            return Err(Error::domain(format!(
                "band of {r} atoms below rank {top} does not fit in n = {}",
                ys.len()
            )));
        }
        let target = ys[top - 1];
        for y in &mut ys[top - 1 - r..top - 1] {
            *y = target;
        }
    }
    ScoreSample::new(ys)
}

/// Near-extremal member of the ball for the `beta`-quantile.
///
/// Its `beta`-quantile equals `quantile(base, beta - 1/k + rho) + epsilon`,
/// approaching the worst case as `k` grows. Requires `k <= n` and, when
/// `rho > 0`, `1/k <= rho`.
pub fn wc_quantile_family(
    base: &ScoreSample,
    beta: Level,
    params: LpParams,
    k: usize,
) -> Result<ScoreSample> {
    let n = base.len();
    if beta.value() + params.rho() > 1.0 + 1e-12 {
        return Err(Error::domain("beta + rho must not exceed 1"));
    }
    if beta.value() <= 0.0 {
        return Err(Error::domain("beta must be positive"));
    }
    if params.rho() == 0.0 {
        return lift_band(base, params.epsilon(), n, 0);
    }
    let inv = check_k(k, n, &params)?;
    let r = band_size(n, &params)?;
    let top = ceil_snap((beta.value() - inv + params.rho()) * n as f64).max(1.0) as usize;
    lift_band(base, params.epsilon(), top, r)
}

/// Near-extremal member of the ball for the CDF at `q`.
///
/// Its CDF at `q` sits between `cdf(base, q - epsilon) - rho` and that value
/// plus `1/k + 1/n`.
pub fn wc_coverage_family(
    base: &ScoreSample,
    q: f64,
    params: LpParams,
    k: usize,
) -> Result<ScoreSample> {
    if !q.is_finite() {
        return Err(Error::domain("q must be finite"));
    }
    let n = base.len();
    if params.rho() == 0.0 {
        return lift_band(base, params.epsilon(), n, 0);
    }
    let inv = check_k(k, n, &params)?;
    let r = band_size(n, &params)?;
    let below = base.count_le(q - params.epsilon());
    let top = below + ceil_snap(n as f64 * inv) as usize;
    lift_band(base, params.epsilon(), top, r)
}

/// Radii for the score distribution when the score map is `k`-Lipschitz.
pub fn propagate_params(k_lipschitz: f64, params: LpParams) -> Result<LpParams> {
    if !(k_lipschitz.is_finite() && k_lipschitz > 0.0) {
        return Err(Error::domain(format!(
            "Lipschitz constant {k_lipschitz} must be positive"
        )));
    }
    LpParams::new(k_lipschitz * params.epsilon(), params.rho())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    #[default]
    L2,
    LInf,
}

impl Norm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::L1 => diffs.sum(),
            Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Norm::LInf => diffs.fold(0.0, f64::max),
        }
    }
}

/// Largest cloud accepted by [`pushforward_check`].
pub const PUSHFORWARD_MAX_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PushforwardReport {
    pub data_rho: f64,
    pub score_rho: f64,
    pub holds: bool,
}

/// Checks that a `k`-Lipschitz score map does not increase LP distance:
/// the score samples at radius `k epsilon` must be at most as far apart as
/// the point clouds at radius `epsilon`.
///
/// `scores_p[i]` must be the score of `cloud_p[i]`, likewise for `q`.
pub fn pushforward_check(
    cloud_p: &[Vec<f64>],
    cloud_q: &[Vec<f64>],
    scores_p: &[f64],
    scores_q: &[f64],
    epsilon: f64,
    k_lipschitz: f64,
    norm: Norm,
) -> Result<PushforwardReport> {
    if cloud_p.len() != scores_p.len() || cloud_q.len() != scores_q.len() {
        return Err(Error::domain("each cloud needs exactly one score per point"));
    }
    if cloud_p.is_empty() || cloud_q.is_empty() {
        return Err(Error::domain("point clouds must be nonempty"));
    }
    if cloud_p.len() > PUSHFORWARD_MAX_POINTS || cloud_q.len() > PUSHFORWARD_MAX_POINTS {
        return Err(Error::domain(format!(
            "point clouds are limited to {PUSHFORWARD_MAX_POINTS} points"
        )));
    }
    let dim = cloud_p[0].len();
    if cloud_p.iter().chain(cloud_q).any(|z| z.len() != dim) {
        return Err(Error::domain("all points must share one dimension"));
    }
    let score_params = propagate_params(k_lipschitz, LpParams::new(epsilon, 0.0)?)?;
    let data = lp_distance_dense(cloud_p.len(), cloud_q.len(), |i, j| {
        norm.distance(&cloud_p[i], &cloud_q[j]) <= epsilon
    });
    let score = lp_distance(
        &ScoreSample::from_slice(scores_p)?,
        &ScoreSample::from_slice(scores_q)?,
        score_params.epsilon(),
    )?;
    Ok(PushforwardReport {
        data_rho: data.rho.value(),
        score_rho: score.rho.value(),
        holds: score.rho.value() <= data.rho.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust::{worst_case_coverage, worst_case_quantile};
    use rand_distr::{Distribution, Exp};

    fn lv(x: f64) -> Level {
        Level::new(x).unwrap()
    }

    fn p(eps: f64, rho: f64) -> LpParams {
        LpParams::new(eps, rho).unwrap()
    }

    fn exp_sample(n: usize, seed: u64) -> ScoreSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Exp::new(1.0).unwrap();
        ScoreSample::new((0..n).map(|_| d.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn identity_and_shift_perturbations() {
        let base = exp_sample(200, 1);
        let spec = PerturbationSpec {
            local_law: LocalLaw::PointMass { value: 0.0 },
            ..PerturbationSpec::new(0.3, 0.0, 0.0, 7).unwrap()
        };
        assert_eq!(perturb_sample(&base, &spec).unwrap(), base);

        let spec = PerturbationSpec {
            local_law: LocalLaw::PointMass { value: 0.3 },
            ..spec
        };
        let out = perturb_sample(&base, &spec).unwrap();
        assert_eq!(out, base.shifted(0.3).unwrap());
        assert_eq!(lp_distance(&base, &out, 0.3).unwrap().rho.value(), 0.0);
    }

    #[test]
    fn global_replacement_rate_matches_rho() {
        let n = 10_000;
        let base = exp_sample(n, 2);
        let spec = PerturbationSpec::new(0.0, 0.3, 1e6, 11).unwrap();
        let out = perturb_sample(&base, &spec).unwrap();
        let rho = lp_distance(&base, &out, 0.0).unwrap().rho.value();
        let sd = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((rho - 0.3).abs() <= 3.0 * sd, "rho {rho}");
    }

    #[test]
    fn perturbation_is_deterministic() {
        let base = exp_sample(100, 3);
        let spec = PerturbationSpec::new(0.2, 0.1, 0.5, 99).unwrap();
        assert_eq!(
            perturb_sample(&base, &spec).unwrap(),
            perturb_sample(&base, &spec).unwrap()
        );
        let other = PerturbationSpec { seed: 100, ..spec };
        assert_ne!(
            perturb_sample(&base, &spec).unwrap(),
            perturb_sample(&base, &other).unwrap()
        );
    }

    #[test]
    fn realized_fraction_bounds_distance() {
        for seed in 0..20 {
            let base = exp_sample(150, seed);
            let spec = PerturbationSpec {
                global_law: GlobalLaw::Uniform {
                    low: -5.0,
                    high: 5.0,
                },
                ..PerturbationSpec::new(0.25, 0.2, 0.0, seed).unwrap()
            };
            let out = perturb_scores(base.scores(), &spec).unwrap();
            let q = ScoreSample::new(out.scores.clone()).unwrap();
            let rho = lp_distance(&base, &q, 0.25).unwrap().rho.value();
            assert!(rho <= out.replaced_fraction() + 1e-12);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = PerturbationSpec {
            local_law: LocalLaw::PointMass { value: 0.5 },
            ..PerturbationSpec::new(0.3, 0.0, 0.0, 0).unwrap()
        };
        assert!(spec.validate().is_err());
        assert!(PerturbationSpec::new(-0.1, 0.0, 0.0, 0).is_err());
        assert!(PerturbationSpec::new(0.1, 1.1, 0.0, 0).is_err());
    }

    #[test]
    fn zero_rho_families_are_pure_shifts() {
        let base = exp_sample(50, 4);
        let shifted = base.shifted(0.2).unwrap();
        assert_eq!(wc_quantile_family(&base, lv(0.5), p(0.2, 0.0), 1).unwrap(), shifted);
        let out = wc_coverage_family(&base, 1.0, p(0.2, 0.0), 1).unwrap();
        assert_eq!(out.cdf(1.0), base.cdf(1.0 - 0.2));
    }

    #[test]
    fn quantile_family_hits_shifted_level() {
        for seed in 0..30 {
            let base = exp_sample(200, seed);
            let params = p(0.1, 0.05);
            for k in [20, 200] {
                let out = wc_quantile_family(&base, lv(0.8), params, k).unwrap();
                let expect = base.quantile_at(0.8 - 1.0 / k as f64 + 0.05) + 0.1;
                assert_eq!(out.quantile(lv(0.8)).unwrap(), expect);
                assert!(lp_distance(&base, &out, 0.1).unwrap().rho.value() <= 0.05 + 1e-12);
                let wc = worst_case_quantile(&base, lv(0.8), params).unwrap();
                assert!(expect <= wc.threshold.finite().unwrap());
            }
        }
    }

    #[test]
    fn quantile_family_improves_with_k() {
        let base = exp_sample(400, 5);
        let params = p(0.05, 0.1);
        let mut last = f64::NEG_INFINITY;
        for k in [10, 20, 50, 100, 400] {
            let v = wc_quantile_family(&base, lv(0.7), params, k)
                .unwrap()
                .quantile(lv(0.7))
                .unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn coverage_family_approaches_bound() {
        let base = exp_sample(500, 6);
        let params = p(0.1, 0.1);
        let q = 1.5;
        let bound = worst_case_coverage(&base, q, params).unwrap().value();
        for k in [10, 100] {
            let out = wc_coverage_family(&base, q, params, k).unwrap();
            let c = out.cdf(q);
            assert!(c >= bound - 1e-12);
            assert!(c - bound <= 1.0 / k as f64 + 1.0 / 500.0 + 1e-12);
            assert!(lp_distance(&base, &out, 0.1).unwrap().rho.value() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn family_preconditions() {
        let base = exp_sample(100, 7);
        assert!(wc_quantile_family(&base, lv(0.95), p(0.0, 0.1), 10).is_err());
        assert!(wc_quantile_family(&base, lv(0.5), p(0.0, 0.1), 5).is_err());
        assert!(wc_quantile_family(&base, lv(0.5), p(0.0, 0.1), 1000).is_err());
        assert!(wc_quantile_family(&base, lv(0.5), p(0.0, 0.001), 1000).is_err());
        assert!(wc_coverage_family(&base, -10.0, p(0.0, 0.1), 10).is_err());
    }

    #[test]
    fn propagate_examples() {
        assert_eq!(propagate_params(1.0, p(0.5, 0.1)).unwrap(), p(0.5, 0.1));
        assert_eq!(propagate_params(2.0, p(0.5, 0.1)).unwrap(), p(1.0, 0.1));
        let r = propagate_params(2.0, p(1.0, 0.07)).unwrap();
        assert_eq!((r.epsilon(), r.rho()), (2.0, 0.07));
        assert!(propagate_params(0.0, p(1.0, 0.0)).is_err());
    }

    #[test]
    fn pushforward_examples() {
        let cloud: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let first = |c: &[Vec<f64>]| c.iter().map(|z| z[0]).collect::<Vec<_>>();
        let r = pushforward_check(&cloud, &cloud, &first(&cloud), &first(&cloud), 0.0, 1.0, Norm::L2)
            .unwrap();
        assert!(r.holds && r.data_rho == 0.0 && r.score_rho == 0.0);

        let moved: Vec<Vec<f64>> = cloud.iter().map(|z| vec![z[0] + 0.1, z[1] - 0.1]).collect();
        let r = pushforward_check(&cloud, &moved, &first(&cloud), &first(&moved), 0.15, 1.0, Norm::L2)
            .unwrap();
        assert!(r.holds && r.data_rho == 0.0 && r.score_rho == 0.0);

        assert!(pushforward_check(&cloud, &moved, &[1.0], &first(&moved), 0.1, 1.0, Norm::L2).is_err());
    }

    #[test]
    fn norms() {
        let (a, b) = ([0.0, 0.0], [3.0, -4.0]);
        assert_eq!(Norm::L1.distance(&a, &b), 7.0);
        assert_eq!(Norm::L2.distance(&a, &b), 5.0);
        assert_eq!(Norm::LInf.distance(&a, &b), 4.0);
    }
}
