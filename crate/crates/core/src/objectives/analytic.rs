use super::{invalid, sign, Objective, ObjectiveError, OptimumInfo};

/// `f(x) = (mu/2) ||x||^2`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    mu: f64,
    optimum: OptimumInfo,
}

impl Quadratic {
    pub fn new(mu: f64, dimension: usize) -> Result<Self, ObjectiveError> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(invalid(
                "mu",
                format!("must be positive and finite, got {mu}"),
            ));
        }
        if dimension == 0 {
            return Err(invalid("dimension", "must be at least 1"));
        }
        let optimum = OptimumInfo::new(vec![0.0; dimension], 0.0, 2.0, Some(mu), f64::INFINITY)?;
        Ok(Self { mu, optimum })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

impl Objective for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dimension(&self) -> usize {
        self.optimum.x_star.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.mu * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.mu * v).collect()
    }

    fn optimum(&self) -> Option<&OptimumInfo> {
        Some(&self.optimum)
    }
}

/// Two-dimensional Rosenbrock function `(a - x1)^2 + b (x2 - x1^2)^2`.
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    a: f64,
    b: f64,
    optimum: OptimumInfo,
}

impl Rosenbrock {
    pub const DEFAULT_RADIUS: f64 = 0.5;

    pub fn new(a: f64, b: f64) -> Result<Self, ObjectiveError> {
        Self::with_radius(a, b, Self::DEFAULT_RADIUS)
    }

    pub fn with_radius(a: f64, b: f64, neighborhood_radius: f64) -> Result<Self, ObjectiveError> {
        if !a.is_finite() {
            return Err(invalid("a", format!("must be finite, got {a}")));
        }
        if !(b >= 0.0) || !b.is_finite() {
            return Err(invalid("b", format!("must be non-negative, got {b}")));
        }
        // Dominance order 2 holds locally; the constant is left to estimation.
        let optimum = OptimumInfo::new(vec![a, a * a], 0.0, 2.0, None, neighborhood_radius)?;
        Ok(Self { a, b, optimum })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Objective for Rosenbrock {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn dimension(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = self.a - x[0];
        let s = x[1] - x[0] * x[0];
        r * r + self.b * s * s
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.a - x[0];
        let s = x[1] - x[0] * x[0];
        vec![-2.0 * r - 4.0 * self.b * x[0] * s, 2.0 * self.b * s]
    }

    fn optimum(&self) -> Option<&OptimumInfo> {
        Some(&self.optimum)
    }
}

/// `f(x) = (1/p) sum_i |x_i|^p`, gradient dominated of order exactly `p`.
#[derive(Debug, Clone)]
pub struct PthPower {
    p: f64,
    optimum: OptimumInfo,
}

impl PthPower {
    pub fn new(p: f64, dimension: usize) -> Result<Self, ObjectiveError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(invalid(
                "p",
                format!("must be finite and exceed 1, got {p}"),
            ));
        }
        if dimension == 0 {
            return Err(invalid("dimension", "must be at least 1"));
        }
        let mu = Self::dominance_constant(p, dimension);
        let optimum = OptimumInfo::new(vec![0.0; dimension], 0.0, p, Some(mu), f64::INFINITY)?;
        Ok(Self { p, optimum })
    }

    /// Largest `mu` for which the order-`p` dominance inequality holds
    /// everywhere.
    ///
    /// With `a_i = |x_i|^p` the inequality reduces to
    /// `((p-1)/p) ||a||_s >= mu^{1/(p-1)} ||a||_1 / p` for `s = 2(p-1)/p`;
    /// the worst ratio `||a||_s / ||a||_1` is `n^{1/s - 1}` when `s >= 1`
    /// (all coordinates equal) and `1` otherwise (a single coordinate).
    pub fn dominance_constant(p: f64, dimension: usize) -> f64 {
        let n = dimension as f64;
        let kappa = n.powf(((2.0 - p) / (2.0 * (p - 1.0))).min(0.0));
        ((p - 1.0) * kappa).powf(p - 1.0)
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl Objective for PthPower {
    fn name(&self) -> &str {
        "pth_power"
    }

    fn dimension(&self) -> usize {
        self.optimum.x_star.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs().powf(self.p)).sum::<f64>() / self.p
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| sign(v) * v.abs().powf(self.p - 1.0))
            .collect()
    }

    fn optimum(&self) -> Option<&OptimumInfo> {
        Some(&self.optimum)
    }
}
