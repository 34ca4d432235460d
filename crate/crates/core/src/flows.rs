//! Continuous-time optimization vector fields.
//!
//! * gradient flow: `x' = -grad f(x)`
//! * q-rescaled gradient flow: `x' = -c grad f / ||grad f||_2^{(q-2)/(q-1)}`
//! * q-signed gradient flow: `x' = -c ||grad f||_1^{1/(q-1)} sign(grad f)`
//!
//! Below `grad_threshold` (Euclidean) the gradient is treated as zero and every
//! flow returns the zero vector, which keeps the minimizer an equilibrium of
//! the discontinuous fields.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::objectives::sign;

pub const DEFAULT_GRAD_THRESHOLD: f64 = 1e-12;

const LOG_SPACE_LOW: f64 = 1e-100;
const LOG_SPACE_HIGH: f64 = 1e100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("{flow} received non-finite gradient component {index} = {value}")]
    NonFinite {
        flow: FlowKind,
        index: usize,
        value: f64,
    },
    #[error("invalid flow parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    #[serde(alias = "GF")]
    Gf,
    #[serde(alias = "RGF")]
    Rgf,
    #[serde(alias = "SGF")]
    Sgf,
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowKind::Gf => "GF",
            FlowKind::Rgf => "RGF",
            FlowKind::Sgf => "SGF",
        })
    }
}

/// The flow exponent parameter `q in (1, inf]`, with infinity kept symbolic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QOrder {
    Finite(f64),
    Infinite,
}

impl QOrder {
    pub fn new(q: f64) -> Result<Self, FlowError> {
        if q == f64::INFINITY {
            Ok(QOrder::Infinite)
        } else if q.is_finite() && q > 1.0 {
            Ok(QOrder::Finite(q))
        } else {
            Err(FlowError::InvalidParameter(format!(
                "q must lie in (1, inf], got {q}"
            )))
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            QOrder::Finite(q) => q,
            QOrder::Infinite => f64::INFINITY,
        }
    }

    /// `(q-2)/(q-1)`, equal to 1 at infinity.
    pub fn rescale_exponent(self) -> f64 {
        match self {
            QOrder::Finite(q) => (q - 2.0) / (q - 1.0),
            QOrder::Infinite => 1.0,
        }
    }

    /// `1/(q-1)`, equal to 0 at infinity.
    pub fn speed_exponent(self) -> f64 {
        match self {
            QOrder::Finite(q) => 1.0 / (q - 1.0),
            QOrder::Infinite => 0.0,
        }
    }

    /// `(q-1)/q`, equal to 1 at infinity.
    pub fn theta_prime(self) -> f64 {
        match self {
            QOrder::Finite(q) => (q - 1.0) / q,
            QOrder::Infinite => 1.0,
        }
    }
}

impl fmt::Display for QOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QOrder::Finite(q) => write!(f, "{q}"),
            QOrder::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for QOrder {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            QOrder::Finite(q) => s.serialize_f64(*q),
            QOrder::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for QOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let q = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Inf" | "Infinity") => {
                f64::INFINITY
            }
            Raw::Text(t) => {
                return Err(serde::de::Error::custom(format!(
                    "q must be a number or \"inf\", got {t:?}"
                )))
            }
        };
        QOrder::new(q).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSpec {
    pub kind: FlowKind,
    /// Ignored for the gradient flow.
    pub q: QOrder,
    /// Fixed to 1 for the gradient flow.
    pub c: f64,
    pub grad_threshold: f64,
}

impl FlowSpec {
    pub fn gradient_flow() -> Self {
        Self {
            kind: FlowKind::Gf,
            q: QOrder::Finite(2.0),
            c: 1.0,
            grad_threshold: DEFAULT_GRAD_THRESHOLD,
        }
    }

    pub fn rescaled(q: f64, c: f64) -> Result<Self, FlowError> {
        Self::new(FlowKind::Rgf, q, c, DEFAULT_GRAD_THRESHOLD)
    }

    pub fn signed(q: f64, c: f64) -> Result<Self, FlowError> {
        Self::new(FlowKind::Sgf, q, c, DEFAULT_GRAD_THRESHOLD)
    }

    pub fn new(kind: FlowKind, q: f64, c: f64, grad_threshold: f64) -> Result<Self, FlowError> {
        if kind == FlowKind::Gf {
            if !(grad_threshold >= 0.0) {
                return Err(FlowError::InvalidParameter(format!(
                    "grad_threshold must be non-negative, got {grad_threshold}"
                )));
            }
            return Ok(Self {
                grad_threshold,
                ..Self::gradient_flow()
            });
        }
        let q = QOrder::new(q)?;
        if !(c > 0.0) || !c.is_finite() {
            return Err(FlowError::InvalidParameter(format!(
                "c must be positive, got {c}"
            )));
        }
        if !(grad_threshold >= 0.0) {
            return Err(FlowError::InvalidParameter(format!(
                "grad_threshold must be non-negative, got {grad_threshold}"
            )));
        }
        Ok(Self {
            kind,
            q,
            c,
            grad_threshold,
        })
    }

    pub fn with_threshold(mut self, grad_threshold: f64) -> Self {
        self.grad_threshold = grad_threshold;
        self
    }
}

impl fmt::Display for FlowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FlowKind::Gf => f.write_str("GF"),
            kind => write!(f, "{kind}(q={}, c={})", self.q, self.c),
        }
    }
}

/// Euclidean norm, rescaled so that huge or tiny components neither overflow
/// nor underflow.
pub fn norm2(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    if (1e-150..1e150).contains(&scale) {
        return v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    scale
        * v.iter()
            .map(|x| (x / scale) * (x / scale))
            .sum::<f64>()
            .sqrt()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `base^exponent`, computed through logarithms for extreme bases.
fn power(base: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        1.0
    } else if !(LOG_SPACE_LOW..=LOG_SPACE_HIGH).contains(&base) {
        (exponent * base.ln()).exp()
    } else {
        base.powf(exponent)
    }
}

/// Velocity `x'` of the configured flow for the given gradient.
pub fn flow_eval(spec: &FlowSpec, grad: &[f64]) -> Result<Vec<f64>, FlowError> {
    if let Some((index, &value)) = grad.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(FlowError::NonFinite {
            flow: spec.kind,
            index,
            value,
        });
    }
    let n2 = norm2(grad);
    if n2 <= spec.grad_threshold {
        return Ok(vec![0.0; grad.len()]);
    }
    Ok(match spec.kind {
        FlowKind::Gf => grad.iter().map(|g| -g).collect(),
        FlowKind::Rgf => {
            let e = spec.q.rescale_exponent();
            if e == 0.0 {
                grad.iter().map(|g| -spec.c * g).collect()
            } else if !(LOG_SPACE_LOW..=LOG_SPACE_HIGH).contains(&n2) {
                // fold the normalization into the exponent of each component
                let ln_n = n2.ln();
                grad.iter()
                    .map(|&g| {
                        if g == 0.0 {
                            0.0
                        } else {
                            -spec.c * sign(g) * (g.abs().ln() - e * ln_n).exp()
                        }
                    })
                    .collect()
            } else {
                let factor = spec.c / n2.powf(e);
                grad.iter().map(|g| -factor * g).collect()
            }
        }
        FlowKind::Sgf => {
            let speed = spec.c * power(norm1(grad), spec.q.speed_exponent());
            grad.iter().map(|&g| -speed * sign(g)).collect()
        }
    })
}

/// Euclidean speed `||x'||` of the flow.
pub fn flow_speed(spec: &FlowSpec, grad: &[f64]) -> Result<f64, FlowError> {
    Ok(norm2(&flow_eval(spec, grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rgf_example() {
        let spec = FlowSpec::rescaled(3.0, 1.0).unwrap();
        let v = flow_eval(&spec, &[3.0, 4.0]).unwrap();
        assert!(close(v[0], -1.341641, 1e-6));
        assert!(close(v[1], -1.788854, 1e-6));
    }

    #[test]
    fn sgf_example() {
        let spec = FlowSpec::signed(3.0, 1.0).unwrap();
        let v = flow_eval(&spec, &[3.0, -4.0]).unwrap();
        assert!(close(v[0], -2.645751, 1e-6));
        assert!(close(v[1], 2.645751, 1e-6));
    }

    #[test]
    fn normalized_flow_at_infinity() {
        let spec = FlowSpec::rescaled(f64::INFINITY, 2.0).unwrap();
        let v = flow_eval(&spec, &[3.0, 4.0]).unwrap();
        assert!(close(v[0], -1.2, 1e-15) && close(v[1], -1.6, 1e-15));
        let unit = FlowSpec::rescaled(f64::INFINITY, 1.0).unwrap();
        for g in [[1e-8, 0.0], [3.0, -7.0], [1e40, 2e40]] {
            assert!(close(flow_speed(&unit, &g).unwrap(), 1.0, 1e-12));
        }
        let sgf = FlowSpec::signed(f64::INFINITY, 1.5).unwrap();
        assert_eq!(
            flow_eval(&sgf, &[2.0, -0.1, 0.0]).unwrap(),
            vec![-1.5, 1.5, 0.0]
        );
    }

    #[test]
    fn stationary_gradient_gives_zero() {
        for spec in [
            FlowSpec::gradient_flow(),
            FlowSpec::rescaled(3.0, 1.0).unwrap(),
            FlowSpec::signed(3.0, 1.0).unwrap(),
            FlowSpec::rescaled(f64::INFINITY, 1.0).unwrap(),
        ] {
            assert_eq!(flow_eval(&spec, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
            assert_eq!(flow_speed(&spec, &[0.0, 0.0]).unwrap(), 0.0);
            assert_eq!(flow_eval(&spec, &[1e-13, 0.0]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn speed_example() {
        let spec = FlowSpec::rescaled(3.0, 1.0).unwrap();
        assert!(close(
            flow_speed(&spec, &[3.0, 4.0]).unwrap(),
            2.2360680,
            1e-7
        ));
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let spec = FlowSpec::signed(3.0, 1.0).unwrap();
        let err = flow_eval(&spec, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(
            err,
            FlowError::NonFinite {
                flow: FlowKind::Sgf,
                index: 1,
                ..
            }
        ));
        assert!(err.to_string().contains("SGF"));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FlowSpec::rescaled(1.0, 1.0).is_err());
        assert!(FlowSpec::rescaled(0.5, 1.0).is_err());
        assert!(FlowSpec::rescaled(3.0, 0.0).is_err());
        assert!(FlowSpec::signed(f64::NAN, 1.0).is_err());
        assert!(FlowSpec::new(FlowKind::Rgf, 3.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn infinite_q_exponents() {
        assert_eq!(QOrder::Infinite.rescale_exponent(), 1.0);
        assert_eq!(QOrder::Infinite.speed_exponent(), 0.0);
    }

    #[test]
    fn rgf_vanishes_continuously() {
        let spec = FlowSpec::rescaled(3.0, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for e in 1..=8 {
            let s = 10f64.powi(-e);
            let speed = flow_speed(&spec, &[0.6 * s, -0.8 * s]).unwrap();
            assert!(close(speed, s.sqrt(), 1e-12 * s.sqrt().max(1e-300)));
            assert!(speed < prev);
            prev = speed;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn large_q_approaches_normalized_flow() {
        let g = [0.3, -2.0, 5.0];
        let a = flow_eval(&FlowSpec::rescaled(1e6, 1.0).unwrap(), &g).unwrap();
        let b = flow_eval(&FlowSpec::rescaled(f64::INFINITY, 1.0).unwrap(), &g).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-4 * y.abs());
        }
    }

    #[test]
    fn q_two_rescaled_is_scaled_gradient_flow() {
        let g = [0.3, -2.0, 5.0];
        let rgf = flow_eval(&FlowSpec::rescaled(2.0, 1.7).unwrap(), &g).unwrap();
        let gf = flow_eval(&FlowSpec::gradient_flow(), &g).unwrap();
        for (r, f) in rgf.iter().zip(&gf) {
            assert_eq!(*r, 1.7 * f);
        }
    }

    #[test]
    fn extreme_magnitudes_stay_finite() {
        let spec = FlowSpec::rescaled(3.0, 1.0).unwrap().with_threshold(0.0);
        let tiny = flow_eval(&spec, &[3e-200, 4e-200]).unwrap();
        // speed = ||g||^{1/2} = (5e-200)^{1/2}
        assert!(close(norm2(&tiny) / (5e-200f64).sqrt(), 1.0, 1e-10));
        let huge = flow_eval(&spec, &[3e200, 4e200]).unwrap();
        assert!(close(norm2(&huge) / (5e200f64).sqrt(), 1.0, 1e-10));
        let sgf = FlowSpec::signed(1.5, 1.0).unwrap();
        assert!(flow_eval(&sgf, &[1e200, 1e200])
            .unwrap()
            .iter()
            .all(|v| v.is_infinite() || v.is_finite()));
    }

    #[test]
    fn q_accepts_inf_string() {
        #[derive(Deserialize)]
        struct W {
            q: QOrder,
        }
        let w: W = toml::from_str("q = \"inf\"").unwrap();
        assert_eq!(w.q, QOrder::Infinite);
        let w: W = toml::from_str("q = 3").unwrap();
        assert_eq!(w.q, QOrder::Finite(3.0));
        assert!(toml::from_str::<W>("q = 1.0").is_err());
    }

    fn any_spec() -> impl Strategy<Value = FlowSpec> {
        (0u8..3, 1.05f64..50.0, 0.1f64..5.0, any::<bool>()).prop_map(|(k, q, c, inf)| {
            let q = if inf { f64::INFINITY } else { q };
            match k {
                0 => FlowSpec::gradient_flow(),
                1 => FlowSpec::rescaled(q, c).unwrap(),
                _ => FlowSpec::signed(q, c).unwrap(),
            }
        })
    }

    proptest! {
        #[test]
        fn flows_descend(spec in any_spec(), g in proptest::collection::vec(-1e3f64..1e3, 1..6)) {
            prop_assume!(norm2(&g) > 1e-6);
            let v = flow_eval(&spec, &g).unwrap();
            let dot: f64 = v.iter().zip(&g).map(|(a, b)| a * b).sum();
            prop_assert!(dot < 0.0);
        }

        #[test]
        fn scale_law(kind in 1u8..3, q in 1.05f64..50.0, g in proptest::collection::vec(-1e3f64..1e3, 1..6)) {
            let kind = if kind == 1 { FlowKind::Rgf } else { FlowKind::Sgf };
            let one = flow_eval(&FlowSpec::new(kind, q, 1.0, 1e-12).unwrap(), &g).unwrap();
            let two = flow_eval(&FlowSpec::new(kind, q, 2.0, 1e-12).unwrap(), &g).unwrap();
            for (a, b) in one.iter().zip(&two) {
                prop_assert_eq!(2.0 * a, *b);
            }
        }
    }
}
