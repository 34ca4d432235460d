//! Discrete-time optimizers built from the flows, the GD / N-AGD / Adam
//! baselines, the trajectory driver, and a fixed-step reference integrator
//! for the continuous-time solutions.

mod reference;
mod run;
mod steppers;

pub use reference::integrate_reference;
pub use run::run;
pub use steppers::{step, step_adam, step_euler, step_gd, step_nagd, step_nesterov_like, step_rk};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flows::{FlowError, FlowSpec};

pub const RK_CONSISTENCY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("step size eta must be positive and finite, got {0}")]
    StepSize(f64),
    #[error("momentum beta must lie in [0, 1), got {0}")]
    Momentum(f64),
    #[error("Runge-Kutta consistency condition violated: sum of alphas is {sum}, expected 1 within {RK_CONSISTENCY_TOL}")]
    Consistency { sum: f64 },
    #[error("Runge-Kutta tableau with {stages} stages needs {stages} alphas and {} betas, got {alphas} and {betas}", stages.saturating_sub(1))]
    TableauShape {
        stages: usize,
        alphas: usize,
        betas: usize,
    },
    #[error("invalid Adam parameter: {0}")]
    Adam(String),
    #[error("invalid stop criteria: {0}")]
    Stop(String),
    #[error("scheme {scheme} cannot be driven by {step}")]
    WrongScheme {
        scheme: &'static str,
        step: &'static str,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("numerical failure at step {k}: {reason}")]
    NumericalFailure { k: u64, reason: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("initial point has dimension {got}, objective expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("initial point is not finite")]
    NonFiniteStart,
    #[error("objective `{0}` has no mini-batch gradients")]
    NoBatchSupport(String),
    #[error("reference step h_ref must be positive, got {0}")]
    ReferenceStep(f64),
}

/// Stage weights for the explicit Runge-Kutta family
/// `x+ = x + eta sum_i alpha_i F(y_i)`, `y_1 = x`,
/// `y_i = x + eta sum_{j<i} beta_j F(y_j)`.
///
/// Each stage weight `beta_j` belongs to stage `j` alone, not to a full
/// Butcher matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RkTableau {
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

impl RkTableau {
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self, ConfigError> {
        if alphas.is_empty() || betas.len() + 1 != alphas.len() {
            return Err(ConfigError::TableauShape {
                stages: alphas.len().max(1),
                alphas: alphas.len(),
                betas: betas.len(),
            });
        }
        let sum: f64 = alphas.iter().sum();
        if !((sum - 1.0).abs() <= RK_CONSISTENCY_TOL) {
            return Err(ConfigError::Consistency { sum });
        }
        Ok(Self { alphas, betas })
    }

    pub fn euler() -> Self {
        Self {
            alphas: vec![1.0],
            betas: Vec::new(),
        }
    }

    pub fn stages(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    Euler { flow: FlowSpec },
    RungeKutta { flow: FlowSpec, tableau: RkTableau },
    NesterovLike { flow: FlowSpec, beta: f64 },
    Gd,
    Nagd { beta: f64 },
    Adam(AdamParams),
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Euler { .. } => "euler",
            Scheme::RungeKutta { .. } => "runge_kutta",
            Scheme::NesterovLike { .. } => "nesterov_like",
            Scheme::Gd => "gd",
            Scheme::Nagd { .. } => "nagd",
            Scheme::Adam(_) => "adam",
        }
    }

    /// The continuous flow a scheme discretizes, if any.
    pub fn flow(&self) -> Option<&FlowSpec> {
        match self {
            Scheme::Euler { flow }
            | Scheme::RungeKutta { flow, .. }
            | Scheme::NesterovLike { flow, .. } => Some(flow),
            _ => None,
        }
    }
}

/// A validated optimizer: scheme plus step size.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizerConfig {
    eta: f64,
    scheme: Scheme,
}

impl DiscretizerConfig {
    pub fn new(eta: f64, scheme: Scheme) -> Result<Self, ConfigError> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(ConfigError::StepSize(eta));
        }
        match &scheme {
            Scheme::NesterovLike { beta, .. } | Scheme::Nagd { beta } => {
                if !(0.0..1.0).contains(beta) {
                    return Err(ConfigError::Momentum(*beta));
                }
            }
            Scheme::Adam(p) => {
                if !(0.0..1.0).contains(&p.beta1) || !(0.0..1.0).contains(&p.beta2) {
                    return Err(ConfigError::Adam(format!(
                        "beta1 and beta2 must lie in [0, 1), got {} and {}",
                        p.beta1, p.beta2
                    )));
                }
                if !(p.epsilon >= 0.0) {
                    return Err(ConfigError::Adam(format!(
                        "epsilon must be non-negative, got {}",
                        p.epsilon
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { eta, scheme })
    }

    pub fn euler(eta: f64, flow: FlowSpec) -> Result<Self, ConfigError> {
        Self::new(eta, Scheme::Euler { flow })
    }

    pub fn runge_kutta(eta: f64, flow: FlowSpec, tableau: RkTableau) -> Result<Self, ConfigError> {
        Self::new(eta, Scheme::RungeKutta { flow, tableau })
    }

    pub fn nesterov_like(eta: f64, beta: f64, flow: FlowSpec) -> Result<Self, ConfigError> {
        Self::new(eta, Scheme::NesterovLike { flow, beta })
    }

    pub fn gd(eta: f64) -> Result<Self, ConfigError> {
        Self::new(eta, Scheme::Gd)
    }

    pub fn nagd(eta: f64, beta: f64) -> Result<Self, ConfigError> {
        Self::new(eta, Scheme::Nagd { beta })
    }

    pub fn adam(eta: f64, params: AdamParams) -> Result<Self, ConfigError> {
        Self::new(eta, Scheme::Adam(params))
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self, ConfigError> {
        Self::new(eta, self.scheme.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriteria {
    pub max_iters: u64,
    /// Stop once `||grad f||_2 <= grad_tol`; zero disables.
    pub grad_tol: f64,
    /// Stop once `f - f* <= f_tol` (only when `f*` is known); zero disables.
    pub f_tol: f64,
    pub wall_limit: Option<f64>,
}

impl StopCriteria {
    pub fn new(
        max_iters: u64,
        grad_tol: f64,
        f_tol: f64,
        wall_limit: Option<f64>,
    ) -> Result<Self, ConfigError> {
        if !(grad_tol >= 0.0) {
            return Err(ConfigError::Stop(format!(
                "grad_tol must be non-negative, got {grad_tol}"
            )));
        }
        if !(f_tol >= 0.0) {
            return Err(ConfigError::Stop(format!(
                "f_tol must be non-negative, got {f_tol}"
            )));
        }
        if let Some(w) = wall_limit {
            if !(w > 0.0) {
                return Err(ConfigError::Stop(format!(
                    "wall_limit must be positive, got {w}"
                )));
            }
        }
        Ok(Self {
            max_iters,
            grad_tol,
            f_tol,
            wall_limit,
        })
    }

    pub fn iterations(max_iters: u64) -> Self {
        Self {
            max_iters,
            grad_tol: 0.0,
            f_tol: 0.0,
            wall_limit: None,
        }
    }
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            grad_tol: 1e-8,
            f_tol: 0.0,
            wall_limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminalReason {
    GradTol,
    FTol,
    MaxIters,
    WallLimit,
    NumericalFailure,
}

impl TerminalReason {
    pub fn reached_tolerance(self) -> bool {
        matches!(self, TerminalReason::GradTol | TerminalReason::FTol)
    }
}

impl fmt::Display for TerminalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminalReason::GradTol => "grad_tol",
            TerminalReason::FTol => "f_tol",
            TerminalReason::MaxIters => "max_iters",
            TerminalReason::WallLimit => "wall_limit",
            TerminalReason::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub k: u64,
    pub t: f64,
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm2: f64,
    pub grad_norm1: f64,
    /// Seconds since the run started, from a monotonic clock.
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub terminal_reason: TerminalReason,
    /// Known optimal value, carried along so exporters can report `f - f*`.
    pub f_star: Option<f64>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn f_gap(&self, r: &Record) -> f64 {
        match self.f_star {
            Some(fs) => r.f - fs,
            None => f64::NAN,
        }
    }

    /// Keeps every `stride`-th record plus the final one.
    pub fn thinned(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let n = self.records.len();
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, _)| i % stride == 0 || i + 1 == n)
            .map(|(_, r)| r.clone())
            .collect();
        Trajectory {
            records,
            terminal_reason: self.terminal_reason,
            f_star: self.f_star,
        }
    }
}

/// Mutable optimizer state. Schemes use the subset of fields they need.
#[derive(Debug, Clone, PartialEq)]
pub struct StepperState {
    pub x: Vec<f64>,
    /// Previous displacement `x_k - x_{k-1}` for the momentum schemes.
    pub y: Vec<f64>,
    /// Adam first moment.
    pub m: Vec<f64>,
    /// Adam second moment.
    pub v: Vec<f64>,
    pub k: u64,
}

impl StepperState {
    pub fn new(x0: Vec<f64>) -> Self {
        let n = x0.len();
        Self {
            x: x0,
            y: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            k: 0,
        }
    }
}
