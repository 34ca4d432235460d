//! Theoretical quantities for the finite-time flows and verdicts against
//! observed trajectories.

mod bounds;
mod closeness;
mod dominance;

pub use bounds::{
    energy_decay_envelope, energy_decay_envelope_with, energy_settling_bound, k_star,
    settling_time_bound, weak_bound, weak_bound_with, EnvelopeExponent,
};
pub use closeness::closeness_epsilon;
pub use dominance::{check_gradient_dominance, DominanceReport};

use serde::Serialize;
use thiserror::Error;

use crate::flows::QOrder;
use crate::integrators::{Record, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("finite-time regime requires q in (p, inf], got p = {p}, q = {q}")]
    NotFiniteTime { p: f64, q: QOrder },
    #[error("energy exponent alpha = {0} >= 1: decay is only asymptotic")]
    Asymptotic(f64),
    #[error("objective `{0}` has no optimum metadata")]
    MissingOptimum(String),
    #[error("trajectory coverage: {0}")]
    Coverage(String),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> AnalysisError {
    AnalysisError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Constants derived from a gradient-dominance order `p`, constant `mu`, and
/// flow order `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceParams {
    pub p: f64,
    pub mu: f64,
    #[serde(serialize_with = "serialize_q")]
    pub q: QOrder,
    /// `(p-1)/p`
    pub theta: f64,
    /// `(q-1)/q`
    pub theta_prime: f64,
    /// `(p/(p-1))^{(p-1)/p} mu^{1/p}`
    pub big_c: f64,
    /// `theta / theta_prime`
    pub alpha: f64,
}

fn serialize_q<S: serde::Serializer>(q: &QOrder, s: S) -> Result<S::Ok, S::Error> {
    match q {
        QOrder::Finite(v) => s.serialize_f64(*v),
        QOrder::Infinite => s.serialize_str("inf"),
    }
}

impl DominanceParams {
    pub fn new(p: f64, mu: f64, q: QOrder) -> Result<Self, AnalysisError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(invalid(
                "p",
                format!("must be finite and exceed 1, got {p}"),
            ));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(invalid("mu", format!("must be positive, got {mu}")));
        }
        let theta = (p - 1.0) / p;
        let theta_prime = q.theta_prime();
        let big_c = (p / (p - 1.0)).powf(theta) * mu.powf(1.0 / p);
        Ok(Self {
            p,
            mu,
            q,
            theta,
            theta_prime,
            big_c,
            alpha: theta / theta_prime,
        })
    }

    /// Decay rate of the energy inequality, `c C^{1/theta'}`.
    pub fn c_tilde(&self, c: f64) -> f64 {
        c * self.big_c.powf(1.0 / self.theta_prime)
    }

    pub fn is_finite_time(&self) -> bool {
        self.q.as_f64() > self.p
    }

    pub(crate) fn require_finite_time(&self) -> Result<(), AnalysisError> {
        if self.is_finite_time() && self.alpha < 1.0 {
            Ok(())
        } else {
            Err(AnalysisError::NotFiniteTime {
                p: self.p,
                q: self.q,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub k: u64,
    pub t: f64,
    pub observed: f64,
    pub bound: f64,
}

/// Outcome of checking a trajectory against a theoretical envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub t_star_bound: Option<f64>,
    pub k_star: Option<f64>,
    pub violations: Vec<Violation>,
    pub passed: bool,
    pub slack: f64,
}

impl BoundReport {
    pub fn verdict(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

/// Flags every record whose `f - f_star` exceeds `envelope(record) + slack`.
pub fn verify_envelope(
    traj: &Trajectory,
    envelope: impl Fn(&Record) -> f64,
    f_star: f64,
    slack: f64,
) -> BoundReport {
    let violations: Vec<Violation> = traj
        .records
        .iter()
        .enumerate()
        .filter_map(|(index, r)| {
            let observed = r.f - f_star;
            let bound = envelope(r);
            // NaN never satisfies the comparison, so it counts as a violation
            let within = observed <= bound + slack;
            (!within).then_some(Violation {
                index,
                k: r.k,
                t: r.t,
                observed,
                bound,
            })
        })
        .collect();
    BoundReport {
        t_star_bound: None,
        k_star: None,
        passed: violations.is_empty(),
        violations,
        slack,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::FlowSpec;
    use crate::integrators::{run, DiscretizerConfig, StopCriteria};
    use crate::objectives::Quadratic;

    #[test]
    fn params_for_quadratic_q3() {
        let d = DominanceParams::new(2.0, 1.0, QOrder::Finite(3.0)).unwrap();
        assert!((d.big_c - 2f64.sqrt()).abs() < 1e-15);
        assert!((d.theta - 0.5).abs() < 1e-15);
        assert!((d.theta_prime - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.alpha - 0.75).abs() < 1e-15);
        assert!((d.c_tilde(1.0) - 1.681793).abs() < 1e-6);
        assert!(d.is_finite_time());
        let inf = DominanceParams::new(2.0, 1.0, QOrder::Infinite).unwrap();
        assert_eq!(inf.theta_prime, 1.0);
        assert_eq!(inf.alpha, 0.5);
    }

    #[test]
    fn params_reject_bad_inputs() {
        assert!(DominanceParams::new(1.0, 1.0, QOrder::Finite(3.0)).is_err());
        assert!(DominanceParams::new(2.0, 0.0, QOrder::Finite(3.0)).is_err());
        assert!(DominanceParams::new(f64::INFINITY, 1.0, QOrder::Infinite).is_err());
    }

    fn sample_traj() -> Trajectory {
        let obj = Quadratic::new(1.0, 1).unwrap();
        let cfg = DiscretizerConfig::euler(0.1, FlowSpec::rescaled(3.0, 1.0).unwrap()).unwrap();
        run(&cfg, &obj, &[1.0], &StopCriteria::iterations(5), None).unwrap()
    }

    #[test]
    fn infinite_envelope_passes() {
        let r = verify_envelope(&sample_traj(), |_| f64::INFINITY, 0.0, 0.0);
        assert!(r.passed && r.violations.is_empty());
        assert_eq!(r.verdict(), "PASS");
    }

    #[test]
    fn negative_envelope_fails_everywhere() {
        let t = sample_traj();
        let r = verify_envelope(&t, |_| -1.0, 0.0, 0.0);
        assert!(!r.passed);
        assert_eq!(r.violations.len(), t.len());
    }
}
