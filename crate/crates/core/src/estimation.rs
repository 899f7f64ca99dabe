//! Data-driven choice of the ambiguity radii `(epsilon, rho)`.
//!
//! For each candidate `epsilon` the LP distance between one calibration batch
//! and the test batch gives the matching `rho`. The other calibration batch
//! then yields the corrected worst-case quantile, and the pair with the
//! smallest finite quantile wins. Ties go to the smallest `epsilon`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp_metric::{check_grid, lp_distance};
use crate::robust::adjusted_beta;
use crate::sample::{Level, ScoreSample};

/// Outcome of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridStatus {
    Feasible,
    /// The corrected miscoverage level fell outside `(0, 1)`.
    InfeasibleBeta,
    /// The quantile level `1 - beta + rho` exceeded 1.
    UnboundedLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub epsilon: f64,
    pub rho: f64,
    pub beta: Option<f64>,
    pub q: Option<f64>,
    pub status: GridStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub epsilon: f64,
    pub rho: f64,
    pub beta: f64,
    pub q: f64,
    pub grid_trace: Vec<GridRow>,
}

/// Evaluates one grid point.
pub fn grid_row(
    calib_a: &ScoreSample,
    calib_b: &ScoreSample,
    test: &ScoreSample,
    epsilon: f64,
    alpha: Level,
) -> Result<GridRow> {
    let rho = lp_distance(calib_a, test, epsilon)?.rho;
    let mut row = GridRow {
        epsilon,
        rho: rho.value(),
        beta: None,
        q: None,
        status: GridStatus::InfeasibleBeta,
    };
    let beta = match adjusted_beta(calib_b.len(), alpha, rho) {
        Ok(b) => b.value(),
        Err(Error::Infeasible(_)) => return Ok(row),
        Err(e) => return Err(e),
    };
    row.beta = Some(beta);
    let level = 1.0 - beta + rho.value();
    if calib_b.rank_for_level(level) > calib_b.len() {
        row.status = GridStatus::UnboundedLevel;
        return Ok(row);
    }
    row.q = Some(calib_b.quantile_at(level) + epsilon);
    row.status = GridStatus::Feasible;
    Ok(row)
}

/// Selects `(epsilon, rho)` over a strictly increasing grid.
///
/// `calib_a` is compared against `test`; `calib_b` supplies the quantile and
/// its size is the `n` of the level correction. The two batches must be
/// disjoint draws from the calibration source.
///
/// # Errors
///
/// `NoFeasibleSet` when no grid point yields a finite quantile.
pub fn estimate_lp_params(
    calib_a: &ScoreSample,
    calib_b: &ScoreSample,
    test: &ScoreSample,
    epsilon_grid: &[f64],
    alpha: Level,
) -> Result<EstimationResult> {
    check_grid(epsilon_grid)?;
    let a = alpha.value();
    if a <= 0.0 || a >= 1.0 {
        return Err(Error::domain("alpha must lie in (0, 1)"));
    }
    let grid_trace = epsilon_grid
        .par_iter()
        .map(|&eps| grid_row(calib_a, calib_b, test, eps, alpha))
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<&GridRow> = None;
    for row in &grid_trace {
        if let Some(q) = row.q {
            if best.is_none_or(|b| q < b.q.unwrap_or(f64::INFINITY)) {
                best = Some(row);
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::NoFeasibleSet(format!(
            "none of the {} grid points admits a finite quantile",
            epsilon_grid.len()
        ))
    })?;
    Ok(EstimationResult {
        epsilon: best.epsilon,
        rho: best.rho,
        beta: best.beta.unwrap_or_default(),
        q: best.q.unwrap_or_default(),
        grid_trace: grid_trace.clone(),
    })
}

/// `points` log-spaced values over `[0.01 IQR, 2 IQR]` of the pooled scores.
///
/// Falls back to the pooled range when the interquartile range is zero.
pub fn default_grid(pooled: &[&ScoreSample], points: usize) -> Result<Vec<f64>> {
    let all: Vec<f64> = pooled.iter().flat_map(|s| s.scores().iter().copied()).collect();
    let all = ScoreSample::new(all)?;
    let q1 = all.quantile_at(0.25);
    let q3 = all.quantile_at(0.75);
    let mut scale = q3 - q1;
    if scale <= 0.0 {
        scale = all.max() - all.min();
    }
    if scale <= 0.0 {
        return Err(Error::domain("pooled scores are constant; supply an explicit grid"));
    }
    log_grid(0.01 * scale, 2.0 * scale, points)
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || points < 2 {
        return Err(Error::domain("log grid needs 0 < lo < hi and at least 2 points"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i + 1 == points { hi } else { (a + step * i as f64).exp() })
        .collect())
}
