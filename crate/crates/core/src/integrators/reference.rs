use std::time::Instant;

use super::run::{check_stop, make_record, validate_start};
use super::{RunError, StopCriteria, TerminalReason, Trajectory};
use crate::flows::{flow_eval, norm2, FlowSpec};
use crate::objectives::Objective;

/// Stage speeds above this multiple of the previous step's speed are clamped.
const SPEED_CLAMP_FACTOR: f64 = 1e3;

/// Fixed-step classical RK4 solution of `x' = F(x)` for the given flow.
///
/// Every step is recorded with `t = k h_ref`. The run ends when `grad_tol`
/// (finite-time arrival) or `f_tol` is met, or after `stop.max_iters` steps,
/// i.e. at time `max_iters * h_ref`. Close to arrival the fields are not
/// Lipschitz; any stage velocity faster than `10^3` times the previous step's
/// average speed is scaled back to that bound.
pub fn integrate_reference(
    flow: &FlowSpec,
    obj: &dyn Objective,
    x0: &[f64],
    h_ref: f64,
    stop: &StopCriteria,
) -> Result<Trajectory, RunError> {
    validate_start(obj, x0)?;
    if !(h_ref > 0.0) || !h_ref.is_finite() {
        return Err(RunError::ReferenceStep(h_ref));
    }
    let started = Instant::now();
    let f_star = obj.f_star();
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut prev_speed: Option<f64> = None;
    let mut records = vec![make_record(obj, 0, 0.0, x0, started)];
    let mut k = 0u64;

    let field = |p: &[f64]| flow_eval(flow, &obj.gradient(p));
    let clamp = |mut v: Vec<f64>, limit: Option<f64>| {
        if let Some(limit) = limit {
            let s = norm2(&v);
            if s > limit && s > 0.0 {
                let r = limit / s;
                v.iter_mut().for_each(|c| *c *= r);
            }
        }
        v
    };
    let offset = |base: &[f64], dir: &[f64], a: f64| -> Vec<f64> {
        base.iter().zip(dir).map(|(b, d)| b + a * d).collect()
    };

    let terminal_reason = loop {
        let last = records.last().expect("initial record");
        if let Some(reason) = check_stop(stop, last, f_star, k, started) {
            break reason;
        }
        let limit = prev_speed.map(|s| s * SPEED_CLAMP_FACTOR);
        let stages = (|| {
            let k1 = clamp(field(&x)?, limit);
            let k2 = clamp(field(&offset(&x, &k1, 0.5 * h_ref))?, limit);
            let k3 = clamp(field(&offset(&x, &k2, 0.5 * h_ref))?, limit);
            let k4 = clamp(field(&offset(&x, &k3, h_ref))?, limit);
            Ok::<_, crate::flows::FlowError>([k1, k2, k3, k4])
        })();
        let Ok([k1, k2, k3, k4]) = stages else {
            break TerminalReason::NumericalFailure;
        };
        let next: Vec<f64> = (0..n)
            .map(|i| x[i] + h_ref / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            break TerminalReason::NumericalFailure;
        }
        let moved: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        prev_speed = Some(norm2(&moved) / h_ref);
        x = next;
        k += 1;
        let rec = make_record(obj, k, k as f64 * h_ref, &x, started);
        let finite = rec.f.is_finite() && rec.grad_norm2.is_finite();
        records.push(rec);
        if !finite {
            break TerminalReason::NumericalFailure;
        }
    };

    Ok(Trajectory {
        records,
        terminal_reason,
        f_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{Quadratic, Rosenbrock};

    fn arrival(h: f64) -> f64 {
        let obj = Quadratic::new(1.0, 1).unwrap();
        let flow = FlowSpec::rescaled(3.0, 1.0).unwrap();
        let stop = StopCriteria::new((3.0 / h) as u64, 1e-6, 0.0, None).unwrap();
        let t = integrate_reference(&flow, &obj, &[1.0], h, &stop).unwrap();
        assert_eq!(t.terminal_reason, TerminalReason::GradTol);
        t.last().unwrap().t
    }

    /// |x|' = -|x|^{1/2} gives sqrt|x(t)| = 1 - t/2, so |x| = 1e-6 at
    /// t = 2 (1 - 1e-3) = 1.998; the trajectory itself settles at t = 2.
    #[test]
    fn scalar_quadratic_arrival_matches_closed_form() {
        let t = arrival(1e-4);
        let closed_form = 2.0 * (1.0 - 1e-6f64.sqrt());
        assert!((t - closed_form).abs() <= 1e-4 + 1e-9, "arrival at {t}");
        assert!(t <= 2.0);
    }

    #[test]
    fn step_halving_changes_arrival_little() {
        assert!((arrival(1e-4) - arrival(5e-5)).abs() < 1e-4);
    }

    #[test]
    fn equilibrium_is_kept() {
        let obj = Rosenbrock::new(1.0, 100.0).unwrap();
        let flow = FlowSpec::signed(3.0, 1.0).unwrap();
        let t = integrate_reference(
            &flow,
            &obj,
            &[1.0, 1.0],
            1e-3,
            &StopCriteria::iterations(50),
        )
        .unwrap();
        assert_eq!(t.len(), 51);
        assert!(t.records.iter().all(|r| r.x == vec![1.0, 1.0]));
    }

    #[test]
    fn matches_gradient_flow_closed_form() {
        // x' = -x on the unit quadratic: x(t) = e^{-t}
        let obj = Quadratic::new(1.0, 1).unwrap();
        let t = integrate_reference(
            &FlowSpec::gradient_flow(),
            &obj,
            &[1.0],
            1e-2,
            &StopCriteria::iterations(100),
        )
        .unwrap();
        let last = t.last().unwrap();
        assert!((last.t - 1.0).abs() < 1e-12);
        assert!((last.x[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_step() {
        let obj = Quadratic::new(1.0, 1).unwrap();
        assert!(integrate_reference(
            &FlowSpec::gradient_flow(),
            &obj,
            &[1.0],
            0.0,
            &StopCriteria::iterations(1)
        )
        .is_err());
    }
}
