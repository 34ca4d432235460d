//! Settling-time bounds and decay envelopes.
//!
//! Along a flow the energy `E(t) = f(x(t)) - f*` satisfies
//! `E' <= -c_eff E^alpha` with `alpha = theta/theta' < 1`, which integrates to
//! `E(t)^{1-alpha} <= E(0)^{1-alpha} - c_eff (1-alpha) t`.

use serde::{Deserialize, Serialize};

use super::{invalid, AnalysisError, DominanceParams};

/// Outer exponent applied to the bracket `[E0^{1-alpha} - c (1-alpha) t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeExponent {
    /// `1/(1-alpha)`, the exponent obtained by integrating the energy
    /// inequality.
    #[default]
    Reciprocal,
    /// `(1-alpha)`, kept for reproducing the bound in its published form.
    Direct,
}

impl EnvelopeExponent {
    fn exponent(self, alpha: f64) -> f64 {
        match self {
            EnvelopeExponent::Reciprocal => 1.0 / (1.0 - alpha),
            EnvelopeExponent::Direct => 1.0 - alpha,
        }
    }
}

/// Upper bound on the settling time of either flow from a point with
/// gradient norm `grad_norm_at_x0`:
/// `||g0||^{1/theta - 1/theta'} / (c C^{1/theta} (1 - theta/theta'))`.
pub fn settling_time_bound(
    params: &DominanceParams,
    c: f64,
    grad_norm_at_x0: f64,
) -> Result<f64, AnalysisError> {
    params.require_finite_time()?;
    if !(c > 0.0) {
        return Err(invalid("c", format!("must be positive, got {c}")));
    }
    if !(grad_norm_at_x0 >= 0.0) {
        return Err(invalid(
            "grad_norm_at_x0",
            format!("must be non-negative, got {grad_norm_at_x0}"),
        ));
    }
    let exponent = 1.0 / params.theta - 1.0 / params.theta_prime;
    Ok(grad_norm_at_x0.powf(exponent)
        / (c * params.big_c.powf(1.0 / params.theta) * (1.0 - params.alpha)))
}

/// `E0^{1-alpha} / (c (1-alpha))`, the time at which `E' = -c E^alpha` hits zero.
pub fn energy_settling_bound(e0: f64, c: f64, alpha: f64) -> Result<f64, AnalysisError> {
    if !(e0 > 0.0) {
        return Err(invalid("E0", format!("must be positive, got {e0}")));
    }
    if !(c > 0.0) {
        return Err(invalid("c", format!("must be positive, got {c}")));
    }
    if !(alpha < 1.0) {
        return Err(AnalysisError::Asymptotic(alpha));
    }
    Ok(e0.powf(1.0 - alpha) / (c * (1.0 - alpha)))
}

fn decay(e0: f64, rate: f64, alpha: f64, elapsed: f64, form: EnvelopeExponent) -> f64 {
    let bracket = (e0.powf(1.0 - alpha) - rate * (1.0 - alpha) * elapsed).max(0.0);
    bracket.powf(form.exponent(alpha))
}

/// Upper envelope on `f(x(t)) - f*` along the continuous flow.
pub fn energy_decay_envelope(
    params: &DominanceParams,
    c: f64,
    e0: f64,
    t: f64,
) -> Result<f64, AnalysisError> {
    energy_decay_envelope_with(params, c, e0, t, EnvelopeExponent::default())
}

pub fn energy_decay_envelope_with(
    params: &DominanceParams,
    c: f64,
    e0: f64,
    t: f64,
    form: EnvelopeExponent,
) -> Result<f64, AnalysisError> {
    params.require_finite_time()?;
    if !(t >= 0.0) {
        return Err(invalid("t", format!("must be non-negative, got {t}")));
    }
    if !(e0 >= 0.0) {
        return Err(invalid("E0", format!("must be non-negative, got {e0}")));
    }
    if !(c > 0.0) {
        return Err(invalid("c", format!("must be positive, got {c}")));
    }
    Ok(decay(e0, params.c_tilde(c), params.alpha, t, form))
}

/// Number of discrete steps after which the weak bound reduces to `L_f eps`:
/// `f_gap0^{1-alpha} / (c_tilde (1-alpha) eta)`.
pub fn k_star(
    params: &DominanceParams,
    c: f64,
    eta: f64,
    f_gap0: f64,
) -> Result<f64, AnalysisError> {
    params.require_finite_time()?;
    if !(eta > 0.0) {
        return Err(invalid("eta", format!("must be positive, got {eta}")));
    }
    if !(f_gap0 >= 0.0) {
        return Err(invalid(
            "f_gap0",
            format!("must be non-negative, got {f_gap0}"),
        ));
    }
    if !(c > 0.0) {
        return Err(invalid("c", format!("must be positive, got {c}")));
    }
    Ok(f_gap0.powf(1.0 - params.alpha) / (params.c_tilde(c) * (1.0 - params.alpha) * eta))
}

/// Bound on `|f(x_k) - f*|` for a discretization whose iterates stay within
/// `eps` of the continuous solution; `lipschitz` is the local Lipschitz
/// constant of `f`.
#[allow(clippy::too_many_arguments)]
pub fn weak_bound(
    params: &DominanceParams,
    c: f64,
    eta: f64,
    f_gap0: f64,
    lipschitz: f64,
    eps: f64,
    k: u64,
) -> Result<f64, AnalysisError> {
    weak_bound_with(
        params,
        c,
        eta,
        f_gap0,
        lipschitz,
        eps,
        k,
        EnvelopeExponent::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn weak_bound_with(
    params: &DominanceParams,
    c: f64,
    eta: f64,
    f_gap0: f64,
    lipschitz: f64,
    eps: f64,
    k: u64,
    form: EnvelopeExponent,
) -> Result<f64, AnalysisError> {
    if !(lipschitz >= 0.0) {
        return Err(invalid(
            "L_f",
            format!("must be non-negative, got {lipschitz}"),
        ));
    }
    if !(eps >= 0.0) {
        return Err(invalid("eps", format!("must be non-negative, got {eps}")));
    }
    let floor = lipschitz * eps;
    let ks = k_star(params, c, eta, f_gap0)?;
    if k as f64 >= ks {
        return Ok(floor);
    }
    Ok(floor
        + decay(
            f_gap0,
            params.c_tilde(c),
            params.alpha,
            eta * k as f64,
            form,
        ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::QOrder;
    use proptest::prelude::*;

    fn quad_q3() -> DominanceParams {
        DominanceParams::new(2.0, 1.0, QOrder::Finite(3.0)).unwrap()
    }

    #[test]
    fn settling_bound_hand_value() {
        let b = settling_time_bound(&quad_q3(), 1.0, 1.0).unwrap();
        assert!((b - 2.0).abs() < 1e-14, "{b}");
        let half = settling_time_bound(&quad_q3(), 2.0, 1.0).unwrap();
        assert_eq!(half, b / 2.0);
    }

    #[test]
    fn settling_bound_needs_q_above_p() {
        let d = DominanceParams::new(3.0, 1.0, QOrder::Finite(2.5)).unwrap();
        assert!(matches!(
            settling_time_bound(&d, 1.0, 1.0),
            Err(AnalysisError::NotFiniteTime { .. })
        ));
        let d = DominanceParams::new(3.0, 1.0, QOrder::Finite(3.0)).unwrap();
        assert!(settling_time_bound(&d, 1.0, 1.0).is_err());
    }

    #[test]
    fn energy_settling_examples() {
        assert!((energy_settling_bound(1.0, 1.0, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(energy_settling_bound(1.0, 1.0, 0.0).unwrap(), 1.0);
        assert!(matches!(
            energy_settling_bound(1.0, 1.0, 1.0),
            Err(AnalysisError::Asymptotic(_))
        ));
        assert!(energy_settling_bound(0.0, 1.0, 0.5).is_err());
    }

    /// RK4 on E' = -sqrt(E), E(0) = 1; the closed form (1 - t/2)^2 vanishes at 2.
    #[test]
    fn energy_settling_is_tight() {
        let h = 1e-5;
        let rhs = |e: f64| -e.max(0.0).sqrt();
        let (mut e, mut t) = (1.0f64, 0.0f64);
        while e > 1e-12 {
            let k1 = rhs(e);
            let k2 = rhs(e + 0.5 * h * k1);
            let k3 = rhs(e + 0.5 * h * k2);
            let k4 = rhs(e + h * k3);
            e += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        let bound = energy_settling_bound(1.0, 1.0, 0.5).unwrap();
        assert!((t - bound).abs() < 1e-4, "zero crossing at {t}");
    }

    #[test]
    fn envelope_anchors_and_clamps() {
        let d = quad_q3();
        assert!((energy_decay_envelope(&d, 1.0, 0.5, 0.0).unwrap() - 0.5).abs() < 1e-15);
        // E0 = 1/2 with ||g0|| = 1: both settling bounds are 2
        let ts = energy_settling_bound(0.5, d.c_tilde(1.0), d.alpha).unwrap();
        assert!((ts - 2.0).abs() < 1e-12);
        assert_eq!(energy_decay_envelope(&d, 1.0, 0.5, ts + 1e-9).unwrap(), 0.0);
        assert_eq!(energy_decay_envelope(&d, 1.0, 0.5, 10.0).unwrap(), 0.0);
        // scalar quadratic solution: E(t) = (1 - t/2)^4 / 2
        for t in [0.25, 1.0, 1.5] {
            let e = energy_decay_envelope(&d, 1.0, 0.5, t).unwrap();
            assert!((e - 0.5 * (1.0 - t / 2.0).powi(4)).abs() < 1e-14);
        }
    }

    #[test]
    fn direct_exponent_form() {
        let d = quad_q3();
        let e = energy_decay_envelope_with(&d, 1.0, 1.0, 0.0, EnvelopeExponent::Direct).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        let t = 1.0;
        let bracket = 1.0 - d.c_tilde(1.0) * 0.25 * t;
        let e = energy_decay_envelope_with(&d, 1.0, 1.0, t, EnvelopeExponent::Direct).unwrap();
        assert!((e - bracket.powf(0.25)).abs() < 1e-15);
    }

    #[test]
    fn k_star_hand_value() {
        let d = quad_q3();
        let ks = k_star(&d, 1.0, 0.01, 1.0).unwrap();
        assert!((ks - 237.84).abs() < 0.01, "{ks}");
        assert!((k_star(&d, 1.0, 1e-3, 1.0).unwrap() - 2378.4).abs() < 0.1);
        assert_eq!(k_star(&d, 1.0, 0.01, 0.0).unwrap(), 0.0);
        assert_eq!(k_star(&d, 1.0, 0.005, 1.0).unwrap(), 2.0 * ks);
    }

    #[test]
    fn weak_bound_examples() {
        let d = quad_q3();
        assert!((weak_bound(&d, 1.0, 0.01, 1.0, 2.0, 0.0, 0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(weak_bound(&d, 1.0, 0.01, 1.0, 2.0, 0.0, 238).unwrap(), 0.0);
        assert_eq!(weak_bound(&d, 1.0, 0.01, 1.0, 2.0, 0.1, 1000).unwrap(), 0.2);
    }

    proptest! {
        #[test]
        fn finite_time_bounds_positive(p in 1.1f64..8.0, gap in 0.01f64..20.0, mu in 0.1f64..10.0, g0 in 1e-3f64..1e3) {
            let q = p + gap;
            let d = DominanceParams::new(p, mu, QOrder::Finite(q)).unwrap();
            prop_assert!(d.alpha < 1.0);
            let b = settling_time_bound(&d, 1.0, g0).unwrap();
            prop_assert!(b.is_finite() && b > 0.0);
        }

        #[test]
        fn envelope_non_increasing(e0 in 0.01f64..10.0, t1 in 0.0f64..5.0, dt in 0.0f64..5.0) {
            let d = quad_q3();
            let a = energy_decay_envelope(&d, 1.0, e0, t1).unwrap();
            let b = energy_decay_envelope(&d, 1.0, e0, t1 + dt).unwrap();
            prop_assert!(b <= a);
        }

        #[test]
        fn weak_bound_non_increasing(k in 0u64..400, dk in 0u64..400, eps in 0.0f64..0.1) {
            let d = quad_q3();
            let a = weak_bound(&d, 1.0, 0.01, 1.0, 1.5, eps, k).unwrap();
            let b = weak_bound(&d, 1.0, 0.01, 1.0, 1.5, eps, k + dk).unwrap();
            prop_assert!(b <= a);
            if k as f64 >= k_star(&d, 1.0, 0.01, 1.0).unwrap() {
                prop_assert_eq!(a, 1.5 * eps);
            }
        }
    }
}
