//! Smallest `eps` for which a discrete trajectory and a densely sampled
//! continuous one are `(T, eps)`-close:
//!
//! (a) every `t` in `[0, T]` has a discrete time `s` with `|t - s| <= eps` and
//!     `||x(t) - x_d(s)|| <= eps`;
//! (b) every step `k` with `k eta <= T` has a time `t` in `[0, T]` with
//!     `|t - k eta| <= eps` and `||x(t) - x_k|| <= eps`.
//!
//! Both trajectories are read as piecewise-linear arcs in `(t, x)`; the
//! discrete one passes through `x_k` at `t = k eta`. A trajectory that ended
//! by reaching its gradient tolerance rests at its last point afterwards.

use super::{invalid, AnalysisError};
use crate::flows::norm2;
use crate::integrators::{TerminalReason, Trajectory};

/// Relative resolution of the bisection on each point's `eps`.
const BISECTION_TOL: f64 = 1e-10;

struct Polyline<'a> {
    t: Vec<f64>,
    x: Vec<&'a [f64]>,
    resting: bool,
}

impl<'a> Polyline<'a> {
    fn new(t: Vec<f64>, x: Vec<&'a [f64]>, resting: bool) -> Self {
        Self { t, x, resting }
    }

    fn last_t(&self) -> f64 {
        *self.t.last().expect("non-empty")
    }

    fn last_x(&self) -> &[f64] {
        self.x[self.x.len() - 1]
    }

    /// Right end of the time domain, clipped to the horizon.
    fn extent(&self, horizon: f64) -> f64 {
        if self.resting {
            horizon
        } else {
            self.last_t().min(horizon)
        }
    }

    fn at(&self, time: f64) -> Vec<f64> {
        if time >= self.last_t() || self.t.len() == 1 {
            return self.last_x().to_vec();
        }
        let j = self.t.partition_point(|&s| s <= time).saturating_sub(1);
        self.at_segment(j, time)
    }

    fn at_segment(&self, j: usize, time: f64) -> Vec<f64> {
        let (t0, t1) = (self.t[j], self.t[j + 1]);
        let w = if t1 > t0 {
            ((time - t0) / (t1 - t0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.x[j]
            .iter()
            .zip(self.x[j + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// Distance from `p` to the arc restricted to times in `[lo, hi]`.
    fn distance_on(&self, p: &[f64], lo: f64, hi: f64) -> f64 {
        let end = self.last_t();
        let mut best = f64::INFINITY;
        if hi >= end {
            best = distance(p, self.last_x());
            if lo >= end {
                return best;
            }
        }
        let first = self.t.partition_point(|&s| s <= lo).saturating_sub(1);
        for j in first..self.t.len() - 1 {
            let (t0, t1) = (self.t[j], self.t[j + 1]);
            if t0 > hi {
                break;
            }
            let a = lo.max(t0);
            let b = hi.min(t1);
            if a > b || t1 <= t0 {
                continue;
            }
            best = best.min(point_segment_distance(
                p,
                &self.at_segment(j, a),
                &self.at_segment(j, b),
            ));
        }
        best
    }

    /// Smallest `e` such that some time within `e` of `t` (and inside
    /// `[0, extent]`) puts the arc within `e` of `p`. Returns `floor` whenever
    /// `floor` already suffices.
    fn graph_gap(&self, t: f64, p: &[f64], horizon: f64, floor: f64) -> f64 {
        let limit = self.extent(horizon);
        let feasible = |e: f64| {
            let lo = (t - e).max(0.0);
            let hi = (t + e).min(limit);
            lo <= hi && self.distance_on(p, lo, hi) <= e
        };
        if feasible(floor) {
            return floor;
        }
        let anchor = t.clamp(0.0, limit);
        let mut hi = (t - anchor).abs().max(distance(p, &self.at(anchor)));
        let mut lo = floor;
        while hi - lo > BISECTION_TOL * (1.0 + hi) {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
    norm2(&d)
}

fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(u, v)| v - u).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    if len2 == 0.0 {
        return distance(p, a);
    }
    let s = (p
        .iter()
        .zip(a)
        .zip(&ab)
        .map(|((pi, ai), d)| (pi - ai) * d)
        .sum::<f64>()
        / len2)
        .clamp(0.0, 1.0);
    let closest: Vec<f64> = a.iter().zip(&ab).map(|(ai, d)| ai + s * d).collect();
    distance(p, &closest)
}

/// Smallest `eps` such that the two trajectories are `(horizon, eps)`-close.
///
/// `continuous` must start at `t = 0` with sample spacing at most `eta / 10`;
/// `discrete` must start at `k = 0`. Each must reach `horizon` or end by
/// meeting its gradient tolerance. Step `k = 0` is included in (b).
pub fn closeness_epsilon(
    continuous: &Trajectory,
    discrete: &Trajectory,
    horizon: f64,
    eta: f64,
) -> Result<f64, AnalysisError> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(invalid("eta", format!("must be positive, got {eta}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(invalid("T", format!("must be non-negative, got {horizon}")));
    }
    if continuous.is_empty() || discrete.is_empty() {
        return Err(AnalysisError::Coverage("empty trajectory".into()));
    }
    let cont = Polyline::new(
        continuous.records.iter().map(|r| r.t).collect(),
        continuous.records.iter().map(|r| r.x.as_slice()).collect(),
        continuous.terminal_reason == TerminalReason::GradTol,
    );
    let disc = Polyline::new(
        discrete.records.iter().map(|r| r.k as f64 * eta).collect(),
        discrete.records.iter().map(|r| r.x.as_slice()).collect(),
        discrete.terminal_reason == TerminalReason::GradTol,
    );
    if cont.t[0] != 0.0 {
        return Err(AnalysisError::Coverage(format!(
            "continuous trajectory starts at t = {}",
            cont.t[0]
        )));
    }
    if discrete.records[0].k != 0 {
        return Err(AnalysisError::Coverage(
            "discrete trajectory does not start at k = 0".into(),
        ));
    }
    let max_gap = cont.t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if max_gap > eta / 10.0 * (1.0 + 1e-9) {
        return Err(AnalysisError::Coverage(format!(
            "continuous sample spacing {max_gap} exceeds eta/10 = {}",
            eta / 10.0
        )));
    }
    for (label, arc) in [("continuous", &cont), ("discrete", &disc)] {
        if arc.extent(horizon) < horizon * (1.0 - 1e-12) {
            return Err(AnalysisError::Coverage(format!(
                "{label} trajectory ends at t = {} before T = {horizon}",
                arc.last_t()
            )));
        }
    }

    let mut eps = 0.0f64;
    // (a): dense continuous samples plus the horizon itself
    let mut times: Vec<f64> = cont.t.iter().copied().filter(|&t| t <= horizon).collect();
    if *times.last().unwrap_or(&0.0) < horizon {
        times.push(horizon);
    }
    for t in times {
        eps = disc.graph_gap(t, &cont.at(t), horizon, eps);
    }
    // (b): every step up to the horizon
    for (tk, xk) in disc
        .t
        .iter()
        .zip(&disc.x)
        .take_while(|(tk, _)| **tk <= horizon * (1.0 + 1e-12))
    {
        eps = cont.graph_gap(*tk, xk, horizon, eps);
    }
    Ok(eps)
}
