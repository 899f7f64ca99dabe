//! Empirical score distributions.
//!
//! A [`ScoreSample`] is the empirical measure of a finite batch of
//! nonconformity scores, each atom carrying mass `1/n`. Quantiles follow the
//! lower-infimum convention `inf { s : F(s) >= beta }`, which for atoms of
//! mass `1/n` is the `ceil(beta * n)`-th order statistic. No interpolation is
//! performed anywhere in this crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when rounding a level multiplied by a count to an
/// integer rank. Level arithmetic such as `1 - alpha + rho` picks up a few
/// ulps of error, which must not push an exact integer rank to the next one.
const RANK_SNAP: f64 = 1e-12;

/// `ceil(x)`, except that values within rounding noise of an integer snap to it.
pub(crate) fn ceil_snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= RANK_SNAP * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// `floor(x)` with the same snapping as [`ceil_snap`].
pub(crate) fn floor_snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= RANK_SNAP * x.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

/// A probability level in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Level(f64);

impl Level {
    pub const ZERO: Level = Level(0.0);
    pub const ONE: Level = Level(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (0.0..=1.0).contains(&value) {
            Ok(Level(value))
        } else {
            Err(Error::domain(format!("level {value} is outside [0, 1]")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Clamps into `[0, 1]`; for values produced by internal arithmetic.
    pub(crate) fn saturating(value: f64) -> Self {
        Level(value.clamp(0.0, 1.0))
    }
}

impl TryFrom<f64> for Level {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Level::new(value)
    }
}

impl From<Level> for f64 {
    fn from(level: Level) -> f64 {
        level.0
    }
}

/// Sorted, finite, nonempty batch of scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSample {
    scores: Vec<f64>,
}

impl ScoreSample {
    /// Builds a sample from scores in any order. Multiplicities are kept.
    pub fn new(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::domain("score sample must be nonempty"));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::domain(format!("score {bad} is not finite")));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self { scores })
    }

    pub fn from_slice(scores: &[f64]) -> Result<Self> {
        Self::new(scores.to_vec())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    /// Always false; kept for API symmetry with collections.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores in nondecreasing order.
    #[inline]
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn min(&self) -> f64 {
        self.scores[0]
    }

    pub fn max(&self) -> f64 {
        self.scores[self.scores.len() - 1]
    }

    /// `k`-th order statistic, 1-indexed.
    pub fn order_statistic(&self, k: usize) -> f64 {
        self.scores[k.clamp(1, self.len()) - 1]
    }

    /// Empirical `beta`-quantile for `0 < beta <= 1`.
    pub fn quantile(&self, beta: Level) -> Result<f64> {
        if beta.value() <= 0.0 {
            return Err(Error::domain("quantile level must be positive"));
        }
        Ok(self.quantile_at(beta.value()))
    }

    /// Quantile at a raw level, clamping the rank into `1..=n`.
    pub(crate) fn quantile_at(&self, level: f64) -> f64 {
        self.order_statistic(self.rank_for_level(level))
    }

    /// The 1-indexed rank `max(1, ceil(level * n))`, not clamped above.
    pub(crate) fn rank_for_level(&self, level: f64) -> usize {
        let k = ceil_snap(level * self.len() as f64);
        if k < 1.0 {
            1
        } else {
            k as usize
        }
    }

    /// Number of scores `<= q`.
    pub fn count_le(&self, q: f64) -> usize {
        self.scores.partition_point(|&s| s <= q)
    }

    /// Empirical CDF, `#{ s_i <= q } / n`.
    pub fn cdf(&self, q: f64) -> f64 {
        self.count_le(q) as f64 / self.len() as f64
    }

    /// Returns a copy with `c` added to every score.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.scores.iter().map(|s| s + c).collect())
    }
}

/// A score threshold; `Unbounded` admits every label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Finite(f64),
    Unbounded,
}

impl Threshold {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, Threshold::Unbounded)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Threshold::Finite(t) => Some(t),
            Threshold::Unbounded => None,
        }
    }

    /// Orders thresholds with `Unbounded` above every finite value.
    pub fn le(&self, other: &Threshold) -> bool {
        match (self, other) {
            (_, Threshold::Unbounded) => true,
            (Threshold::Unbounded, Threshold::Finite(_)) => false,
            (Threshold::Finite(a), Threshold::Finite(b)) => a <= b,
        }
    }

    /// Whether a score passes the threshold (`score <= t`).
    #[inline]
    pub fn admits(&self, score: f64) -> bool {
        match *self {
            Threshold::Finite(t) => score <= t,
            Threshold::Unbounded => true,
        }
    }
}

/// A threshold together with the quantile level that produced it.
///
/// When `threshold` is finite it equals `quantile(sample, level_used) +
/// offset`. When it is unbounded, `level_used` records the requested level,
/// which then exceeds 1 (or the weighted mass available).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: Threshold,
    pub level_used: f64,
    pub offset: f64,
    pub coverage_bound: Option<f64>,
}

impl ThresholdResult {
    pub(crate) fn finite(value: f64, level_used: f64, offset: f64) -> Self {
        Self {
            threshold: Threshold::Finite(value),
            level_used,
            offset,
            coverage_bound: None,
        }
    }

    pub(crate) fn unbounded(level_used: f64, offset: f64) -> Self {
        Self {
            threshold: Threshold::Unbounded,
            level_used,
            offset,
            coverage_bound: None,
        }
    }

    /// Quantile lookup at `level` plus `offset`, unbounded when `level > 1`.
    pub(crate) fn from_level(sample: &ScoreSample, level: f64, offset: f64) -> Self {
        if sample.rank_for_level(level) > sample.len() {
            Self::unbounded(level, offset)
        } else {
            Self::finite(sample.quantile_at(level) + offset, level, offset)
        }
    }

    pub(crate) fn with_bound(mut self, bound: Option<f64>) -> Self {
        self.coverage_bound = bound;
        self
    }
}

/// Split-conformal threshold with the `ceil((1 - alpha)(n + 1)) / n` level.
pub fn conformal_quantile(sample: &ScoreSample, alpha: Level) -> Result<ThresholdResult> {
    let a = alpha.value();
    if a <= 0.0 || a >= 1.0 {
        return Err(Error::domain("alpha must lie in (0, 1)"));
    }
    let n = sample.len();
    let k = ceil_snap((1.0 - a) * (n as f64 + 1.0)) as usize;
    let level = k as f64 / n as f64;
    if k > n {
        return Ok(ThresholdResult::unbounded(level, 0.0));
    }
    Ok(ThresholdResult::finite(sample.order_statistic(k), level, 0.0))
}

/// Reads one score per line. With `header`, the first line is skipped.
pub fn read_scores<R: std::io::Read>(reader: R, header: bool) -> Result<ScoreSample> {
    ScoreSample::new(read_values(reader, header)?)
}

/// Reads the first column of a CSV as numbers, in file order.
pub fn read_values<R: std::io::Read>(reader: R, header: bool) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut values = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = record
            .get(0)
            .ok_or_else(|| Error::Parse(format!("record {}: empty line", line + 1)))?;
        if field.is_empty() {
            continue;
        }
        let v: f64 = field
            .parse()
            .map_err(|_| Error::Parse(format!("record {}: cannot parse {field:?}", line + 1)))?;
        values.push(v);
    }
    Ok(values)
}

pub fn write_scores<W: std::io::Write>(writer: W, scores: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(writer);
    for s in scores {
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}
