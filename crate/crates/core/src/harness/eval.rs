use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::ScoreMatrix;
use crate::baselines::{chi2_threshold, fg_level, rscp_threshold, sc_threshold, WeightedQuantiler};
use crate::error::{Error, Result};
use crate::lp_metric::LpParams;
use crate::robust::{adjusted_beta, robust_threshold, tv_threshold, winf_threshold};
use crate::sample::{Level, ScoreSample, Threshold, ThresholdResult};
use crate::shiftlab::displace;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Salt separating the perturbation stream from the split stream.
const PERTURB_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// A threshold rule together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Sc,
    /// LP-robust threshold; `corrected` swaps `alpha` for the finite-sample
    /// adjusted level.
    Lp {
        epsilon: f64,
        rho: f64,
        corrected: bool,
    },
    Tv {
        rho: f64,
    },
    Winf {
        epsilon: f64,
    },
    Chi2 {
        rho: f64,
    },
    Weighted,
    Rscp {
        delta: f64,
        sigma: f64,
    },
    Fg {
        rho: f64,
    },
}

/// Parameter values shared by the methods, as supplied on a command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodParams {
    pub epsilon: f64,
    pub rho: f64,
    pub rho_chi2: f64,
    pub delta: f64,
    pub sigma: f64,
    pub corrected: bool,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            rho: 0.0,
            rho_chi2: 0.0,
            delta: 0.0,
            sigma: 1.0,
            corrected: true,
        }
    }
}

impl Method {
    pub const NAMES: [&'static str; 8] =
        ["sc", "lp", "tv", "winf", "chi2", "weighted", "rscp", "fg"];

    pub fn from_name(name: &str, p: &MethodParams) -> Result<Self> {
        let m = match name {
            "sc" => Method::Sc,
            "lp" => Method::Lp {
                epsilon: p.epsilon,
                rho: p.rho,
                corrected: p.corrected,
            },
            "tv" => Method::Tv { rho: p.rho },
            "winf" => Method::Winf { epsilon: p.epsilon },
            "chi2" => Method::Chi2 { rho: p.rho_chi2 },
            "weighted" => Method::Weighted,
            "rscp" => Method::Rscp {
                delta: p.delta,
                sigma: p.sigma,
            },
            "fg" => Method::Fg { rho: p.rho_chi2 },
            other => {
                return Err(Error::domain(format!(
                    "unknown method {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(m)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Sc => "sc",
            Method::Lp { .. } => "lp",
            Method::Tv { .. } => "tv",
            Method::Winf { .. } => "winf",
            Method::Chi2 { .. } => "chi2",
            Method::Weighted => "weighted",
            Method::Rscp { .. } => "rscp",
            Method::Fg { .. } => "fg",
        }
    }

    pub fn uses_weights(&self) -> bool {
        matches!(self, Method::Weighted | Method::Fg { .. })
    }

    /// Threshold from an unweighted calibration sample.
    ///
    /// Weighted methods fall back to uniform weights with a unit test weight.
    pub fn threshold(&self, sample: &ScoreSample, alpha: Level) -> Result<ThresholdResult> {
        match self.calibrate(sample, None, alpha)? {
            Calibrated::Global(t) => Ok(t),
            Calibrated::PerRow { quantiler, level } => quantiler.quantile(1.0, level),
        }
    }

    fn calibrate(
        &self,
        sample: &ScoreSample,
        weights: Option<&[f64]>,
        alpha: Level,
    ) -> Result<Calibrated> {
        let global = match *self {
            Method::Sc => sc_threshold(sample, alpha)?,
            Method::Lp {
                epsilon,
                rho,
                corrected,
            } => {
                let params = LpParams::new(epsilon, rho)?;
                let a = if corrected {
                    adjusted_beta(sample.len(), alpha, Level::new(rho)?)?
                } else {
                    alpha
                };
                robust_threshold(sample, a, params)?
            }
            Method::Tv { rho } => tv_threshold(sample, alpha, Level::new(rho)?)?,
            Method::Winf { epsilon } => winf_threshold(sample, alpha, epsilon)?,
            Method::Chi2 { rho } => chi2_threshold(sample, alpha, rho)?,
            Method::Rscp { delta, sigma } => rscp_threshold(sample, alpha, delta, sigma)?,
            Method::Weighted | Method::Fg { .. } => {
                let level = match *self {
                    Method::Fg { rho } => fg_level(alpha, rho)?,
                    _ => {
                        let a = alpha.value();
                        if a <= 0.0 || a >= 1.0 {
                            return Err(Error::domain("alpha must lie in (0, 1)"));
                        }
                        1.0 - a
                    }
                };
                let ones;
                let w = match weights {
                    Some(w) => w,
                    None => {
                        ones = vec![1.0; sample.len()];
                        &ones
                    }
                };
                return Ok(Calibrated::PerRow {
                    quantiler: WeightedQuantiler::new(sample.scores(), w)?,
                    level,
                });
            }
        };
        Ok(Calibrated::Global(global))
    }
}

enum Calibrated {
    Global(ThresholdResult),
    PerRow {
        quantiler: WeightedQuantiler,
        level: f64,
    },
}

/// Score-space perturbation of the test rows.
///
/// With probability `rho` a row is relabelled to its neighbouring class
/// `(y + 1) mod L`; otherwise the true-label score moves by uniform noise on
/// `[-epsilon, epsilon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestPerturbation {
    pub epsilon: f64,
    pub rho: f64,
    /// Draw fresh noise in every split; otherwise each row keeps one draw.
    pub redraw: bool,
}

impl TestPerturbation {
    fn validate(&self) -> Result<()> {
        LpParams::new(self.epsilon, self.rho).map(|_| ())
    }

    fn apply_row(&self, m: &mut ScoreMatrix, i: usize, rng: &mut impl Rng) {
        let u: f64 = rng.random();
        let noise = if self.epsilon > 0.0 {
            rng.random_range(-self.epsilon..=self.epsilon)
        } else {
            0.0
        };
        let y = m.true_label(i);
        if u < self.rho && m.labels() > 1 {
            m.set_true_label(i, (y + 1) % m.labels());
        } else {
            let row = m.row_mut(i);
            row[y] = displace(row[y], noise, self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub alpha: f64,
    pub splits: usize,
    pub n_calib: usize,
    pub k_test: usize,
    pub seed: u64,
    pub perturbation: Option<TestPerturbation>,
}

impl EvalConfig {
    fn validate(&self, matrix: &ScoreMatrix) -> Result<Level> {
        let alpha = Level::new(self.alpha)?;
        if self.alpha <= 0.0 || self.alpha >= 1.0 {
            return Err(Error::domain("alpha must lie in (0, 1)"));
        }
        if self.splits == 0 {
            return Err(Error::domain("at least one split is required"));
        }
        if self.n_calib == 0 || self.k_test == 0 {
            return Err(Error::domain("n_calib and k_test must be positive"));
        }
        check_sizes(matrix.rows(), self.n_calib, self.k_test)?;
        if let Some(p) = &self.perturbation {
            p.validate()?;
        }
        Ok(alpha)
    }
}

fn check_sizes(rows: usize, n_calib: usize, k_test: usize) -> Result<()> {
    if n_calib.checked_add(k_test).is_none_or(|t| t > rows) {
        return Err(Error::domain(format!(
            "n_calib + k_test = {} + {} exceeds {rows} rows",
            n_calib, k_test
        )));
    }
    Ok(())
}

/// Generator for split `j`: one ChaCha stream per split under a shared key.
pub fn split_rng(seed: u64, split: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split as u64);
    rng
}

fn split_rows(rows: usize, n_calib: usize, k_test: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let picked = index::sample(rng, rows, n_calib + k_test).into_vec();
    let (calib, test) = picked.split_at(n_calib);
    (calib.to_vec(), test.to_vec())
}

/// Random calibration/test partition without replacement.
///
/// The calibration sample holds the true-label scores of its rows.
pub fn split(
    matrix: &ScoreMatrix,
    n_calib: usize,
    k_test: usize,
    seed: u64,
) -> Result<(ScoreSample, ScoreMatrix)> {
    check_sizes(matrix.rows(), n_calib, k_test)?;
    let (calib, test) = split_rows(matrix.rows(), n_calib, k_test, &mut split_rng(seed, 0));
    let sample = ScoreSample::new(calib.iter().map(|&i| matrix.true_score(i)).collect())?;
    Ok((sample, matrix.select(&test)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitResult {
    pub split: usize,
    /// Shared threshold of the split; absent for per-row weighted rules.
    pub threshold: Option<Threshold>,
    pub covered: usize,
    pub coverage: f64,
    pub mean_set_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub coverage_mean: f64,
    pub coverage_sd: f64,
    pub set_size_mean: f64,
    pub set_size_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub alpha: f64,
    pub splits: usize,
    pub n_calib: usize,
    pub k_test: usize,
    pub seed: u64,
    pub rows: usize,
    pub labels: usize,
    pub perturbation: Option<TestPerturbation>,
    pub weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub method: Method,
    pub config: ReportConfig,
    pub per_split: Vec<SplitResult>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates `methods` on the same sequence of splits.
///
/// `weights`, when given, holds one likelihood ratio per matrix row and is
/// read only by the weighted rules; they default to uniform weights.
pub fn compare(
    matrix: &ScoreMatrix,
    methods: &[Method],
    config: &EvalConfig,
    weights: Option<&[f64]>,
) -> Result<Vec<EvalReport>> {
    methods
        .iter()
        .map(|m| evaluate(matrix, m, config, weights))
        .collect()
}

/// Average coverage and set size of `method` over `config.splits` splits.
pub fn evaluate(
    matrix: &ScoreMatrix,
    method: &Method,
    config: &EvalConfig,
    weights: Option<&[f64]>,
) -> Result<EvalReport> {
    let alpha = config.validate(matrix)?;
    if let Some(w) = weights {
        if w.len() != matrix.rows() {
            return Err(Error::domain(format!(
                "{} weights for {} rows",
                w.len(),
                matrix.rows()
            )));
        }
    }
    let fixed = match config.perturbation {
        Some(p) if !p.redraw => {
            let mut perturbed = matrix.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ PERTURB_SALT);
            rng.set_stream(u64::MAX);
            for i in 0..perturbed.rows() {
                p.apply_row(&mut perturbed, i, &mut rng);
            }
            Some(perturbed)
        }
        _ => None,
    };

    let per_split = (0..config.splits)
        .into_par_iter()
        .map(|j| {
            run_split(matrix, fixed.as_ref(), method, config, alpha, weights, j).map_err(|e| {
                Error::Split {
                    split: j,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (coverage_mean, coverage_sd) = mean_sd(per_split.iter().map(|s| s.coverage));
    let (set_size_mean, set_size_sd) = mean_sd(per_split.iter().map(|s| s.mean_set_size));
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: *method,
        config: ReportConfig {
            alpha: config.alpha,
            splits: config.splits,
            n_calib: config.n_calib,
            k_test: config.k_test,
            seed: config.seed,
            rows: matrix.rows(),
            labels: matrix.labels(),
            perturbation: config.perturbation,
            weights: weights.is_some(),
        },
        per_split,
        aggregate: Aggregate {
            coverage_mean,
            coverage_sd,
            set_size_mean,
            set_size_sd,
        },
    })
}

fn run_split(
    matrix: &ScoreMatrix,
    fixed: Option<&ScoreMatrix>,
    method: &Method,
    config: &EvalConfig,
    alpha: Level,
    weights: Option<&[f64]>,
    j: usize,
) -> Result<SplitResult> {
    let (calib_rows, test_rows) = split_rows(
        matrix.rows(),
        config.n_calib,
        config.k_test,
        &mut split_rng(config.seed, j),
    );
    let calib = ScoreSample::new(calib_rows.iter().map(|&i| matrix.true_score(i)).collect())?;
    let test = match (fixed, config.perturbation) {
        (Some(f), _) => f.select(&test_rows),
        (None, Some(p)) => {
            let mut t = matrix.select(&test_rows);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ PERTURB_SALT);
            rng.set_stream(j as u64);
            for i in 0..t.rows() {
                p.apply_row(&mut t, i, &mut rng);
            }
            t
        }
        (None, None) => matrix.select(&test_rows),
    };

    // The sample is sorted, so calibration weights must follow the same order.
    let calib_weights: Option<Vec<f64>> = weights.map(|w| {
        let mut pairs: Vec<(f64, f64)> =
            calib_rows.iter().map(|&i| (matrix.true_score(i), w[i])).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pairs.into_iter().map(|p| p.1).collect()
    });
    let cal = method.calibrate(&calib, calib_weights.as_deref(), alpha)?;

    let mut covered = 0usize;
    let mut total_size = 0usize;
    for (t, &row) in test_rows.iter().enumerate() {
        let threshold = match &cal {
            Calibrated::Global(r) => r.threshold,
            Calibrated::PerRow { quantiler, level } => {
                let w = weights.map_or(1.0, |w| w[row]);
                quantiler.quantile(w, *level)?.threshold
            }
        };
        let scores = test.row(t);
        total_size += scores.iter().filter(|&&s| threshold.admits(s)).count();
        if threshold.admits(scores[test.true_label(t)]) {
            covered += 1;
        }
    }
    let k = test_rows.len() as f64;
    Ok(SplitResult {
        split: j,
        threshold: match &cal {
            Calibrated::Global(r) => Some(r.threshold),
            Calibrated::PerRow { .. } => None,
        },
        covered,
        coverage: covered as f64 / k,
        mean_set_size: total_size as f64 / k,
    })
}

/// One summary row per report: method, parameters and aggregates.
pub fn write_table_csv<W: std::io::Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "params",
        "alpha",
        "splits",
        "coverage_mean",
        "coverage_sd",
        "set_size_mean",
        "set_size_sd",
    ])?;
    for r in reports {
        w.write_record([
            r.method.name().to_string(),
            serde_json::to_string(&r.method)?,
            r.config.alpha.to_string(),
            r.config.splits.to_string(),
            r.aggregate.coverage_mean.to_string(),
            r.aggregate.coverage_sd.to_string(),
            r.aggregate.set_size_mean.to_string(),
            r.aggregate.set_size_sd.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{synthetic_matrix, SynthConfig};

    fn small() -> ScoreMatrix {
        synthetic_matrix(&SynthConfig {
            rows: 400,
            labels: 5,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn cfg() -> EvalConfig {
        EvalConfig {
            alpha: 0.1,
            splits: 8,
            n_calib: 200,
            k_test: 150,
            seed: 3,
            perturbation: None,
        }
    }

    #[test]
    fn split_examples() {
        let m = small();
        let (cal, test) = split(&m, 400, 0, 1).unwrap();
        assert_eq!((cal.len(), test.rows()), (400, 0));
        assert_eq!(split(&m, 100, 50, 9).unwrap(), split(&m, 100, 50, 9).unwrap());
        let ten = m.select(&(0..10).collect::<Vec<_>>());
        let a = split(&ten, 5, 5, 0).unwrap();
        let b = split(&ten, 5, 5, 1).unwrap();
        assert_ne!(a, b);
        assert!(split(&m, 300, 101, 0).is_err());
    }

    #[test]
    fn report_counts_are_consistent() {
        let m = small();
        let r = evaluate(&m, &Method::Sc, &cfg(), None).unwrap();
        assert_eq!(r.per_split.len(), 8);
        for s in &r.per_split {
            assert_eq!(s.coverage, s.covered as f64 / 150.0);
            assert!((0.0..=5.0).contains(&s.mean_set_size));
        }
    }

    #[test]
    fn uncorrected_lp_at_zero_radius_matches_plain_quantile() {
        let m = small();
        let lp = Method::Lp {
            epsilon: 0.0,
            rho: 0.0,
            corrected: false,
        };
        let r = evaluate(&m, &lp, &cfg(), None).unwrap();
        for (j, s) in r.per_split.iter().enumerate() {
            let (cal, _) = split_rows(m.rows(), 200, 150, &mut split_rng(3, j));
            let sample = ScoreSample::new(cal.iter().map(|&i| m.true_score(i)).collect()).unwrap();
            let q = sample.quantile(Level::new(0.9).unwrap()).unwrap();
            assert_eq!(s.threshold, Some(Threshold::Finite(q)));
        }
    }

    #[test]
    fn single_label_matrix_is_always_covered() {
        let m = ScoreMatrix::new(1, (0..100).map(f64::from).collect(), vec![0; 100]).unwrap();
        let c = EvalConfig {
            n_calib: 50,
            k_test: 40,
            ..cfg()
        };
        let r = evaluate(&m, &Method::Lp { epsilon: 0.0, rho: 0.5, corrected: false }, &c, None)
            .unwrap();
        for s in &r.per_split {
            assert_eq!(s.threshold, Some(Threshold::Unbounded));
            assert_eq!((s.coverage, s.mean_set_size), (1.0, 1.0));
        }
    }

    #[test]
    fn set_size_shrinks_as_alpha_grows() {
        let m = small();
        let mut last = f64::INFINITY;
        for alpha in [0.05, 0.1, 0.2, 0.3] {
            let r = evaluate(&m, &Method::Sc, &EvalConfig { alpha, ..cfg() }, None).unwrap();
            assert!(r.aggregate.set_size_mean <= last);
            last = r.aggregate.set_size_mean;
        }
    }

    #[test]
    fn compare_pairs_splits_and_keeps_order() {
        let m = small();
        let methods = [Method::Sc, Method::Chi2 { rho: 0.1 }, Method::Weighted];
        let reports = compare(&m, &methods, &cfg(), None).unwrap();
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[0], evaluate(&m, &Method::Sc, &cfg(), None).unwrap());
        assert_eq!(reports[2].method, Method::Weighted);
        // Uniform weights reproduce split conformal on every split.
        for (a, b) in reports[0].per_split.iter().zip(&reports[2].per_split) {
            assert_eq!(a.covered, b.covered);
        }
        assert!(compare(&m, &[], &cfg(), None).unwrap().is_empty());
        let mut buf = Vec::new();
        write_table_csv(&reports, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn errors_carry_the_split_index() {
        let m = small();
        let lp = Method::Lp {
            epsilon: 0.0,
            rho: 0.05,
            corrected: true,
        };
        let c = EvalConfig {
            n_calib: 10,
            ..cfg()
        };
        match evaluate(&m, &lp, &c, None) {
            Err(Error::Split { source, .. }) => {
                assert!(matches!(*source, Error::Infeasible(_)))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Method::from_name("nope", &MethodParams::default()).is_err());
    }

    #[test]
    fn perturbation_modes_are_reproducible() {
        let m = small();
        for redraw in [true, false] {
            let c = EvalConfig {
                perturbation: Some(TestPerturbation {
                    epsilon: 0.1,
                    rho: 0.1,
                    redraw,
                }),
                ..cfg()
            };
            let a = evaluate(&m, &Method::Sc, &c, None).unwrap();
            assert_eq!(a.to_json().unwrap(), evaluate(&m, &Method::Sc, &c, None).unwrap().to_json().unwrap());
        }
    }
}
