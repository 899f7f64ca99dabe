//! Exact Lévy–Prokhorov distance between one-dimensional empirical measures.
//!
//! `LP_eps(P, Q)` is the optimal transport cost under the 0/1 cost
//! `1{|x - y| > eps}`: the least mass that has to travel farther than `eps`.
//! Between empirical measures with `n` and `m` atoms the problem is solved
//! exactly as an integer maximum flow after scaling every source atom to `m`
//! units and every target atom to `n` units (`n * m` units in total). Because
//! both samples are sorted, the targets reachable from a source form a
//! contiguous index range whose endpoints are nondecreasing in the source
//! index; ranges are attached through a segment tree so the network stays at
//! `O((n + m) log m)` edges.
//!
//! Two atoms are matchable when `max(x, y) <= min(x, y) + eps` in floating
//! point. This is symmetric, admits every pair with `|x - y| <= eps` in exact
//! arithmetic, and keeps a copy shifted by `fl(x + eps)` at distance zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowNetwork, INF_CAP};
use crate::sample::{Level, ScoreSample};

/// Matching predicate for the threshold cost: true iff the pair costs 0.
#[inline]
pub fn within(x: f64, y: f64, epsilon: f64) -> bool {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    hi <= lo + epsilon
}

/// Radii `(epsilon, rho)` of the ambiguity ball `{ Q : LP_epsilon(P, Q) <= rho }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpParams {
    epsilon: f64,
    rho: Level,
}

impl LpParams {
    pub fn new(epsilon: f64, rho: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            rho: Level::new(rho)?,
        })
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn rho(&self) -> f64 {
        self.rho.value()
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("epsilon {epsilon} must be finite and >= 0")))
    }
}

/// One entry of a transport plan. Indices refer to the sorted samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingEdge {
    pub source: usize,
    pub target: usize,
    /// Mass in units of `1 / (n m)`.
    pub units: u64,
    pub mass: f64,
}

/// Optimal coupling for the threshold cost.
///
/// `matched` edges all join pairs within `epsilon`; `unmatched` edges carry
/// the remaining mass, which pays cost 1. Together they form a full coupling:
/// every source row sums to `m` units (mass `1/n`) and every target column
/// to `n` units (mass `1/m`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportResult {
    pub rho: Level,
    pub matched_mass: Level,
    pub matched_units: u64,
    pub total_units: u64,
    pub matched: Vec<CouplingEdge>,
    pub unmatched: Vec<CouplingEdge>,
}

/// Which exact solver computes the matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    /// Greedy sweep when `n == m`, max flow otherwise.
    #[default]
    Auto,
    Flow,
    /// Sorted sweep; only valid for equal sample sizes.
    Greedy,
}

/// `LP_epsilon(p, q)` with its optimal coupling.
pub fn lp_distance(p: &ScoreSample, q: &ScoreSample, epsilon: f64) -> Result<TransportResult> {
    lp_distance_with(p, q, epsilon, Solver::Auto)
}

pub fn lp_distance_with(
    p: &ScoreSample,
    q: &ScoreSample,
    epsilon: f64,
    solver: Solver,
) -> Result<TransportResult> {
    check_epsilon(epsilon)?;
    let (n, m) = (p.len(), q.len());
    let ranges = reachable_ranges(p.scores(), q.scores(), epsilon);
    let matched = match solver {
        Solver::Auto if n == m => greedy_matching(&ranges, n),
        Solver::Greedy => {
            if n != m {
                return Err(Error::domain(format!(
                    "greedy solver needs equal sizes, got {n} and {m}"
                )));
            }
            greedy_matching(&ranges, n)
        }
        Solver::Auto | Solver::Flow => flow_matching(&ranges, n, m),
    };
    Ok(assemble(matched, n, m))
}

/// For each source, the half-open range of matchable target indices.
fn reachable_ranges(xs: &[f64], ys: &[f64], epsilon: f64) -> Vec<(usize, usize)> {
    xs.iter()
        .map(|&x| {
            let lo = ys.partition_point(|&y| !(y >= x || y + epsilon >= x));
            let hi = ys.partition_point(|&y| y < x || y <= x + epsilon);
            (lo, hi.max(lo))
        })
        .collect()
}

/// Equal-size sweep: each target, in order, takes the lowest-index unmatched
/// source that reaches it. With nondecreasing range endpoints this is the
/// earliest-deadline rule and yields a maximum matching.
fn greedy_matching(ranges: &[(usize, usize)], n: usize) -> Vec<CouplingEdge> {
    let units = n as u64;
    let mut out = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    let mut next = 0;
    for j in 0..n {
        while next < ranges.len() && ranges[next].0 <= j {
            queue.push_back(next);
            next += 1;
        }
        while let Some(&i) = queue.front() {
            if ranges[i].1 <= j {
                queue.pop_front();
            } else {
                break;
            }
        }
        if let Some(i) = queue.pop_front() {
            out.push(CouplingEdge {
                source: i,
                target: j,
                units,
                mass: 0.0,
            });
        }
    }
    out
}

fn flow_matching(ranges: &[(usize, usize)], n: usize, m: usize) -> Vec<CouplingEdge> {
    let size = m.next_power_of_two();
    // Node layout: source, sink, n source atoms, then the segment tree
    // (heap-indexed 1..2*size, leaf `size + j` is target j).
    let (src, sink) = (0, 1);
    let atom = |i: usize| 2 + i;
    let tree = |t: usize| 2 + n + t;
    let mut g = FlowNetwork::new(2 + n + 2 * size);

    for i in 0..n {
        g.add_edge(src, atom(i), m as i64);
    }
    for j in 0..m {
        g.add_edge(tree(size + j), sink, n as i64);
    }
    // Internal tree edges only where the subtree holds a real leaf.
    for t in 1..size {
        for child in [2 * t, 2 * t + 1] {
            if subtree_start(child, size) < m {
                g.add_edge(tree(t), tree(child), INF_CAP);
            }
        }
    }
    for (i, &(lo, hi)) in ranges.iter().enumerate() {
        for t in cover(lo, hi, size) {
            g.add_edge(atom(i), tree(t), INF_CAP);
        }
    }
    g.max_flow(src, sink);

    // Peel the flow into (source, target) pieces. Conservation holds at every
    // tree node, so any amount entering a node can be routed to leaves along
    // edges that still carry flow.
    let mut residual: Vec<Vec<(usize, i64)>> = (0..g.node_count())
        .map(|v| if v >= tree(1) { g.flowing_out(v) } else { Vec::new() })
        .collect();
    let mut out = Vec::new();
    for i in 0..n {
        let mut pieces: Vec<(usize, i64)> = Vec::new();
        for (node, amount) in g.flowing_out(atom(i)) {
            descend(node, amount, &mut residual, &mut pieces, |v| {
                let t = v - tree(0);
                (t >= size).then(|| t - size)
            });
        }
        pieces.sort_unstable();
        for (j, units) in merge_runs(pieces) {
            out.push(CouplingEdge {
                source: i,
                target: j,
                units: units as u64,
                mass: 0.0,
            });
        }
    }
    out
}

/// Exact LP distance for an arbitrary bipartite match relation, on a dense
/// network. Used for point clouds, where no interval structure is available.
pub(crate) fn lp_distance_dense(
    n: usize,
    m: usize,
    matchable: impl Fn(usize, usize) -> bool,
) -> TransportResult {
    let (src, sink) = (0, 1);
    let mut g = FlowNetwork::new(2 + n + m);
    for i in 0..n {
        g.add_edge(src, 2 + i, m as i64);
    }
    for j in 0..m {
        g.add_edge(2 + n + j, sink, n as i64);
    }
    for i in 0..n {
        for j in 0..m {
            if matchable(i, j) {
                g.add_edge(2 + i, 2 + n + j, INF_CAP);
            }
        }
    }
    g.max_flow(src, sink);
    let matched = (0..n)
        .flat_map(|i| {
            g.flowing_out(2 + i)
                .into_iter()
                .map(move |(v, units)| CouplingEdge {
                    source: i,
                    target: v - 2 - n,
                    units: units as u64,
                    mass: 0.0,
                })
        })
        .collect();
    assemble(matched, n, m)
}

fn descend(
    start: usize,
    amount: i64,
    residual: &mut [Vec<(usize, i64)>],
    pieces: &mut Vec<(usize, i64)>,
    leaf_of: impl Fn(usize) -> Option<usize> + Copy,
) {
    if let Some(j) = leaf_of(start) {
        pieces.push((j, amount));
        return;
    }
    let mut left = amount;
    let mut k = 0;
    while left > 0 {
        let (child, avail) = residual[start][k];
        if avail == 0 {
            k += 1;
            continue;
        }
        let take = left.min(avail);
        residual[start][k].1 -= take;
        left -= take;
        descend(child, take, residual, pieces, leaf_of);
    }
}

fn merge_runs(pieces: Vec<(usize, i64)>) -> Vec<(usize, i64)> {
    let mut merged: Vec<(usize, i64)> = Vec::with_capacity(pieces.len());
    for (j, u) in pieces {
        match merged.last_mut() {
            Some(last) if last.0 == j => last.1 += u,
            _ => merged.push((j, u)),
        }
    }
    merged
}

fn subtree_start(mut t: usize, size: usize) -> usize {
    let mut width = 1;
    while t < size {
        t *= 2;
        width *= 2;
    }
    let _ = width;
    t - size
}

/// Canonical segment-tree nodes covering leaves `[lo, hi)`.
fn cover(lo: usize, hi: usize, size: usize) -> Vec<usize> {
    let mut nodes = Vec::new();
    let (mut l, mut r) = (lo + size, hi + size);
    while l < r {
        if l & 1 == 1 {
            nodes.push(l);
            l += 1;
        }
        if r & 1 == 1 {
            r -= 1;
            nodes.push(r);
        }
        l /= 2;
        r /= 2;
    }
    nodes
}

/// Adds masses and fills in the cost-1 remainder of the coupling.
fn assemble(mut matched: Vec<CouplingEdge>, n: usize, m: usize) -> TransportResult {
    let total = (n as u64) * (m as u64);
    let mut row_left = vec![m as u64; n];
    let mut col_left = vec![n as u64; m];
    for e in &mut matched {
        e.mass = e.units as f64 / total as f64;
        row_left[e.source] -= e.units;
        col_left[e.target] -= e.units;
    }
    let matched_units: u64 = matched.iter().map(|e| e.units).sum();

    // North-west corner over the leftovers.
    let mut unmatched = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if row_left[i] == 0 {
            i += 1;
            continue;
        }
        if col_left[j] == 0 {
            j += 1;
            continue;
        }
        let u = row_left[i].min(col_left[j]);
        unmatched.push(CouplingEdge {
            source: i,
            target: j,
            units: u,
            mass: u as f64 / total as f64,
        });
        row_left[i] -= u;
        col_left[j] -= u;
    }

    TransportResult {
        rho: Level::saturating((total - matched_units) as f64 / total as f64),
        matched_mass: Level::saturating(matched_units as f64 / total as f64),
        matched_units,
        total_units: total,
        matched,
        unmatched,
    }
}

/// Total variation distance, `LP_0`.
pub fn tv_distance(p: &ScoreSample, q: &ScoreSample) -> Result<Level> {
    Ok(lp_distance(p, q, 0.0)?.rho)
}

/// Whether `W_inf(p, q) <= epsilon`.
///
/// Equal sizes compare sorted order statistics; otherwise the LP distance at
/// `epsilon` must vanish.
pub fn winf_within(p: &ScoreSample, q: &ScoreSample, epsilon: f64) -> Result<bool> {
    check_epsilon(epsilon)?;
    if p.len() == q.len() {
        return Ok(p
            .scores()
            .iter()
            .zip(q.scores())
            .all(|(&x, &y)| within(x, y, epsilon)));
    }
    let t = lp_distance_with(p, q, epsilon, Solver::Flow)?;
    Ok(t.matched_units == t.total_units)
}

/// `LP_eps` along a strictly increasing grid of nonnegative radii.
pub fn lp_profile(p: &ScoreSample, q: &ScoreSample, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_grid(grid)?;
    grid.iter()
        .map(|&eps| Ok((eps, lp_distance(p, q, eps)?.rho.value())))
        .collect()
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::domain("epsilon grid is empty"));
    }
    for &eps in grid {
        check_epsilon(eps)?;
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("epsilon grid must be strictly increasing"));
    }
    Ok(())
}
