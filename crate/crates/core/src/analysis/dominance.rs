use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{invalid, AnalysisError};
use crate::flows::norm2;
use crate::objectives::Objective;

/// Relative slack for rounding in the dominance inequality.
const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub holds: bool,
    /// Smallest `lhs - rhs` seen over the samples.
    pub worst_margin: f64,
    /// Largest `mu` for which every sample satisfies the inequality.
    pub mu_max_estimate: f64,
    pub samples: usize,
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while primes.len() < n {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|p| !candidate.is_multiple_of(*p))
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Halton point `i` of the cube `[-1,1]^n` pushed radially onto the unit
/// ball, so each sup-norm shell lands on the matching Euclidean shell.
fn halton_ball(i: u64, primes: &[u64]) -> Vec<f64> {
    let c: Vec<f64> = primes
        .iter()
        .map(|&b| 2.0 * radical_inverse(i, b) - 1.0)
        .collect();
    let two = norm2(&c);
    if two == 0.0 {
        return c;
    }
    let sup = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    c.iter().map(|v| v * sup / two).collect()
}

fn uniform_ball(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm2(&d);
        if len > 0.0 {
            let r = rng.random::<f64>().powf(1.0 / n as f64);
            return d.iter().map(|v| v * r / len).collect();
        }
    }
}

/// Tests `((p-1)/p) ||grad f||^{p/(p-1)} >= mu^{1/(p-1)} (f - f*)` at
/// `n_samples` points of the ball of radius `radius` around the objective's
/// minimizer: half from a Halton sequence, half uniform from `seed`.
pub fn check_gradient_dominance(
    obj: &dyn Objective,
    p: f64,
    mu: f64,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DominanceReport, AnalysisError> {
    let opt = obj
        .optimum()
        .ok_or_else(|| AnalysisError::MissingOptimum(obj.name().to_string()))?;
    if !(p > 1.0) || !p.is_finite() {
        return Err(invalid(
            "p",
            format!("must be finite and exceed 1, got {p}"),
        ));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(invalid("mu", format!("must be positive, got {mu}")));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid(
            "radius",
            format!("must be positive and finite, got {radius}"),
        ));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be positive"));
    }

    let n = obj.dimension();
    let primes = first_primes(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_halton = n_samples / 2;
    let grad_exp = p / (p - 1.0);
    let mu_factor = mu.powf(1.0 / (p - 1.0));

    let mut holds = true;
    let mut worst_margin = f64::INFINITY;
    let mut ratio_min = f64::INFINITY;
    for i in 0..n_samples {
        let unit = if i < n_halton {
            // index 0 of the sequence is the origin; start at 1
            halton_ball(i as u64 + 1, &primes)
        } else {
            uniform_ball(&mut rng, n)
        };
        let x: Vec<f64> = opt
            .x_star
            .iter()
            .zip(&unit)
            .map(|(s, u)| s + radius * u)
            .collect();
        let gap = obj.value(&x) - opt.f_star;
        let lhs = (p - 1.0) / p * norm2(&obj.gradient(&x)).powf(grad_exp);
        let rhs = mu_factor * gap;
        let margin = lhs - rhs;
        worst_margin = worst_margin.min(margin);
        if margin < -REL_TOL * lhs.abs().max(rhs.abs()) || margin.is_nan() {
            holds = false;
        }
        if gap > 0.0 {
            ratio_min = ratio_min.min(lhs / gap);
        }
    }
    Ok(DominanceReport {
        holds,
        worst_margin,
        mu_max_estimate: ratio_min.powf(p - 1.0),
        samples: n_samples,
    })
}
