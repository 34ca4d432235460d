//! Objective functions: the cost abstraction, analytic test functions, a
//! small teacher-student MLP, and a central-difference gradient check.

mod analytic;
mod mlp;

pub use analytic::{PthPower, Quadratic, Rosenbrock};
pub use mlp::Mlp;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(
        "non-finite value at coordinate {coordinate} (f(x+h e_i) = {plus}, f(x-h e_i) = {minus})"
    )]
    NonFinite {
        coordinate: usize,
        plus: f64,
        minus: f64,
    },
    #[error("dimension mismatch: objective has {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> ObjectiveError {
    ObjectiveError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Known minimizer and the gradient-dominance data claimed around it.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimumInfo {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Dominance order, `p > 1`.
    pub p: f64,
    /// Dominance constant. `None` when it has to be estimated separately.
    pub mu: Option<f64>,
    pub neighborhood_radius: f64,
}

impl OptimumInfo {
    pub fn new(
        x_star: Vec<f64>,
        f_star: f64,
        p: f64,
        mu: Option<f64>,
        neighborhood_radius: f64,
    ) -> Result<Self, ObjectiveError> {
        if !(p > 1.0) {
            return Err(invalid(
                "p",
                format!("dominance order must exceed 1, got {p}"),
            ));
        }
        if let Some(m) = mu {
            if !(m > 0.0) {
                return Err(invalid("mu", format!("must be positive, got {m}")));
            }
        }
        if !(neighborhood_radius > 0.0) {
            return Err(invalid(
                "neighborhood_radius",
                format!("must be positive, got {neighborhood_radius}"),
            ));
        }
        Ok(Self {
            x_star,
            f_star,
            p,
            mu,
            neighborhood_radius,
        })
    }
}

/// Mini-batch sampling parameters for stochastic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchContext {
    pub rng_seed: u64,
    pub batch_size: usize,
    pub dataset_size: usize,
}

impl BatchContext {
    pub fn new(
        rng_seed: u64,
        batch_size: usize,
        dataset_size: usize,
    ) -> Result<Self, ObjectiveError> {
        if batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if batch_size > dataset_size {
            return Err(invalid(
                "batch_size",
                format!("{batch_size} exceeds dataset size {dataset_size}"),
            ));
        }
        Ok(Self {
            rng_seed,
            batch_size,
            dataset_size,
        })
    }
}

/// A differentiable cost `f : R^n -> R`.
///
/// Implementations are immutable after construction, so one instance can be
/// evaluated from many worker threads at once.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    fn optimum(&self) -> Option<&OptimumInfo> {
        None
    }

    fn f_star(&self) -> Option<f64> {
        self.optimum().map(|o| o.f_star)
    }

    fn supports_batches(&self) -> bool {
        false
    }

    /// Gradient over a mini-batch drawn from `(batch.rng_seed, iteration)`.
    /// Returns `None` for objectives without a dataset.
    fn batch_gradient(
        &self,
        _x: &[f64],
        _batch: &BatchContext,
        _iteration: u64,
    ) -> Option<Vec<f64>> {
        None
    }
}

/// Largest relative discrepancy between the analytic gradient and a central
/// difference, `max_i |g_i - d_i| / max(1, |d_i|)`.
pub fn finite_difference_check(
    obj: &dyn Objective,
    x: &[f64],
    h: f64,
) -> Result<f64, ObjectiveError> {
    if x.len() != obj.dimension() {
        return Err(ObjectiveError::Dimension {
            expected: obj.dimension(),
            got: x.len(),
        });
    }
    if !(h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {h}")));
    }
    let grad = obj.gradient(x);
    let mut probe = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = obj.value(&probe);
        probe[i] = x[i] - h;
        let minus = obj.value(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(ObjectiveError::NonFinite {
                coordinate: i,
                plus,
                minus,
            });
        }
        let d = (plus - minus) / (2.0 * h);
        let err = (grad[i] - d).abs() / d.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// `sign` with `sign(0) = 0`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_info_validates() {
        assert!(OptimumInfo::new(vec![0.0], 0.0, 1.0, Some(1.0), 1.0).is_err());
        assert!(OptimumInfo::new(vec![0.0], 0.0, 2.0, Some(0.0), 1.0).is_err());
        assert!(OptimumInfo::new(vec![0.0], 0.0, 2.0, Some(1.0), 0.0).is_err());
        assert!(OptimumInfo::new(vec![0.0], 0.0, 2.0, None, f64::INFINITY).is_ok());
    }

    #[test]
    fn batch_context_rejects_oversized_batch() {
        assert!(BatchContext::new(0, 33, 32).is_err());
        assert!(BatchContext::new(0, 0, 32).is_err());
        assert!(BatchContext::new(0, 32, 32).is_ok());
    }

    struct Broken;
    impl Objective for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn dimension(&self) -> usize {
            2
        }
        fn value(&self, x: &[f64]) -> f64 {
            if x[1] > 0.5 {
                f64::NAN
            } else {
                x[0]
            }
        }
        fn gradient(&self, _x: &[f64]) -> Vec<f64> {
            vec![1.0, 0.0]
        }
    }

    #[test]
    fn fd_check_reports_offending_coordinate() {
        let err = finite_difference_check(&Broken, &[0.0, 0.5], 1e-3).unwrap_err();
        assert!(matches!(
            err,
            ObjectiveError::NonFinite { coordinate: 1, .. }
        ));
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(-3.0), -1.0);
    }
}
