use std::time::Instant;

use super::{
    step, DiscretizerConfig, Record, RunError, StepperState, StopCriteria, TerminalReason,
    Trajectory,
};
use crate::flows::{norm1, norm2};
use crate::objectives::{BatchContext, Objective};

pub(crate) fn make_record(
    obj: &dyn Objective,
    k: u64,
    t: f64,
    x: &[f64],
    started: Instant,
) -> Record {
    let g = obj.gradient(x);
    Record {
        k,
        t,
        x: x.to_vec(),
        f: obj.value(x),
        grad_norm2: norm2(&g),
        grad_norm1: norm1(&g),
        wall_s: started.elapsed().as_secs_f64(),
    }
}

/// First satisfied criterion in the order grad_tol, f_tol, max_iters,
/// wall_limit.
pub(crate) fn check_stop(
    stop: &StopCriteria,
    rec: &Record,
    f_star: Option<f64>,
    steps_taken: u64,
    started: Instant,
) -> Option<TerminalReason> {
    if !rec.f.is_finite() || !rec.grad_norm2.is_finite() {
        return Some(TerminalReason::NumericalFailure);
    }
    if stop.grad_tol > 0.0 && rec.grad_norm2 <= stop.grad_tol {
        return Some(TerminalReason::GradTol);
    }
    if let Some(fs) = f_star {
        if stop.f_tol > 0.0 && rec.f - fs <= stop.f_tol {
            return Some(TerminalReason::FTol);
        }
    }
    if steps_taken >= stop.max_iters {
        return Some(TerminalReason::MaxIters);
    }
    if let Some(limit) = stop.wall_limit {
        if started.elapsed().as_secs_f64() >= limit {
            return Some(TerminalReason::WallLimit);
        }
    }
    None
}

pub(crate) fn validate_start(obj: &dyn Objective, x0: &[f64]) -> Result<(), RunError> {
    if x0.len() != obj.dimension() {
        return Err(RunError::Dimension {
            expected: obj.dimension(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(RunError::NonFiniteStart);
    }
    Ok(())
}

/// Iterates the configured stepper from `x0`, recording every iterate.
///
/// With a `batch` context the stepper sees mini-batch gradients drawn from
/// `(batch.rng_seed, k)`; records always carry the full objective value and
/// gradient norms. A numerical failure ends the run with
/// [`TerminalReason::NumericalFailure`] and keeps the records so far.
pub fn run(
    cfg: &DiscretizerConfig,
    obj: &dyn Objective,
    x0: &[f64],
    stop: &StopCriteria,
    batch: Option<&BatchContext>,
) -> Result<Trajectory, RunError> {
    validate_start(obj, x0)?;
    if batch.is_some() && !obj.supports_batches() {
        return Err(RunError::NoBatchSupport(obj.name().to_string()));
    }
    let started = Instant::now();
    let f_star = obj.f_star();
    let eta = cfg.eta();
    let mut state = StepperState::new(x0.to_vec());
    let mut records = vec![make_record(obj, 0, 0.0, x0, started)];

    let terminal_reason = loop {
        let last = records.last().expect("initial record");
        if let Some(reason) = check_stop(stop, last, f_star, state.k, started) {
            break reason;
        }
        let k = state.k;
        let result = match batch {
            Some(ctx) => step(
                cfg,
                &mut |x| {
                    obj.batch_gradient(x, ctx, k)
                        .expect("batch support checked")
                },
                &mut state,
            ),
            None => step(cfg, &mut |x| obj.gradient(x), &mut state),
        };
        if result.is_err() {
            break TerminalReason::NumericalFailure;
        }
        let rec = make_record(obj, state.k, state.k as f64 * eta, &state.x, started);
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
    use crate::flows::{norm2, FlowSpec};
    use crate::integrators::{AdamParams, RkTableau};
    use crate::objectives::{Mlp, Quadratic, Rosenbrock};

    fn without_wall(t: &Trajectory) -> Vec<(u64, f64, Vec<f64>, f64, f64, f64)> {
        t.records
            .iter()
            .map(|r| (r.k, r.t, r.x.clone(), r.f, r.grad_norm2, r.grad_norm1))
            .collect()
    }

    #[test]
    fn zero_iterations_gives_initial_record() {
        let obj = Quadratic::new(1.0, 2).unwrap();
        let cfg = DiscretizerConfig::gd(0.1).unwrap();
        let t = run(&cfg, &obj, &[1.0, 0.0], &StopCriteria::iterations(0), None).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.terminal_reason, TerminalReason::MaxIters);
        assert_eq!(t.records[0].k, 0);
    }

    /// x_k = 0.9^k, so ||grad|| <= 1e-6 first at k = ceil(ln 1e-6 / ln 0.9) = 132.
    #[test]
    fn gd_geometric_decay_stops_at_132() {
        let obj = Quadratic::new(1.0, 2).unwrap();
        let cfg = DiscretizerConfig::gd(0.1).unwrap();
        let stop = StopCriteria::new(100_000, 1e-6, 0.0, None).unwrap();
        let t = run(&cfg, &obj, &[1.0, 0.0], &stop, None).unwrap();
        let expected = (1e-6f64.ln() / 0.9f64.ln()).ceil() as u64;
        assert_eq!(expected, 132);
        assert_eq!(t.terminal_reason, TerminalReason::GradTol);
        assert_eq!(t.last().unwrap().k, expected);
        assert!(t.records.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn tolerance_order_prefers_gradient() {
        let obj = Quadratic::new(1.0, 1).unwrap();
        let cfg = DiscretizerConfig::gd(0.1).unwrap();
        let stop = StopCriteria::new(0, 1.0, 1.0, None).unwrap();
        let t = run(&cfg, &obj, &[0.5], &stop, None).unwrap();
        assert_eq!(t.terminal_reason, TerminalReason::GradTol);
        let stop = StopCriteria::new(0, 0.1, 1.0, None).unwrap();
        let t = run(&cfg, &obj, &[0.5], &stop, None).unwrap();
        assert_eq!(t.terminal_reason, TerminalReason::FTol);
    }

    #[test]
    fn deterministic_replay() {
        let obj = Rosenbrock::new(1.0, 100.0).unwrap();
        let cfg = DiscretizerConfig::runge_kutta(
            1e-3,
            FlowSpec::rescaled(3.0, 1.0).unwrap(),
            RkTableau::new(vec![0.5, 0.5], vec![0.09]).unwrap(),
        )
        .unwrap();
        let stop = StopCriteria::iterations(500);
        let a = run(&cfg, &obj, &[0.2, 1.5], &stop, None).unwrap();
        let b = run(&cfg, &obj, &[0.2, 1.5], &stop, None).unwrap();
        assert_eq!(without_wall(&a), without_wall(&b));
    }

    #[test]
    fn stochastic_runs_are_pure_in_seed() {
        let obj = Mlp::new(&[3, 6, 1], 64, 0.1, 4).unwrap();
        let cfg = DiscretizerConfig::nesterov_like(0.04, 0.9, FlowSpec::signed(3.0, 1e-3).unwrap())
            .unwrap();
        let x0 = vec![0.1; obj.dimension()];
        let stop = StopCriteria::iterations(30);
        let ctx = BatchContext::new(21, 16, 64).unwrap();
        let a = run(&cfg, &obj, &x0, &stop, Some(&ctx)).unwrap();
        let b = run(&cfg, &obj, &x0, &stop, Some(&ctx)).unwrap();
        assert_eq!(without_wall(&a), without_wall(&b));
        let other = BatchContext::new(22, 16, 64).unwrap();
        let c = run(&cfg, &obj, &x0, &stop, Some(&other)).unwrap();
        assert_ne!(without_wall(&a), without_wall(&c));
    }

    #[test]
    fn batch_requires_support() {
        let obj = Quadratic::new(1.0, 2).unwrap();
        let cfg = DiscretizerConfig::adam(0.1, AdamParams::default()).unwrap();
        let ctx = BatchContext::new(0, 1, 1).unwrap();
        let err = run(
            &cfg,
            &obj,
            &[1.0, 1.0],
            &StopCriteria::iterations(3),
            Some(&ctx),
        )
        .unwrap_err();
        assert!(matches!(err, RunError::NoBatchSupport(_)));
    }

    #[test]
    fn divergence_keeps_partial_trajectory() {
        let obj = Quadratic::new(1.0, 1).unwrap();
        let cfg = DiscretizerConfig::gd(3.0).unwrap();
        let t = run(&cfg, &obj, &[1.0], &StopCriteria::iterations(10_000), None).unwrap();
        assert_eq!(t.terminal_reason, TerminalReason::NumericalFailure);
        assert!(t.len() > 100);
        let n = t.len();
        assert!(t.records[..n - 1].iter().all(|r| r.f.is_finite()));
    }

    #[test]
    fn rejects_bad_start() {
        let obj = Quadratic::new(1.0, 2).unwrap();
        let cfg = DiscretizerConfig::gd(0.1).unwrap();
        assert!(run(&cfg, &obj, &[1.0], &StopCriteria::default(), None).is_err());
        assert!(run(&cfg, &obj, &[1.0, f64::NAN], &StopCriteria::default(), None).is_err());
    }

    #[test]
    fn small_step_euler_descends_monotonically() {
        let obj = Quadratic::new(1.0, 2).unwrap();
        for q in [2.1, 3.0, 6.0, 10.0, f64::INFINITY] {
            for flow in [
                FlowSpec::gradient_flow(),
                FlowSpec::rescaled(q, 1.0).unwrap(),
                FlowSpec::signed(q, 1.0).unwrap(),
            ] {
                for eta in [0.1, 0.01] {
                    let cfg = DiscretizerConfig::euler(eta, flow).unwrap();
                    let t = run(
                        &cfg,
                        &obj,
                        &[1.0, -0.7],
                        &StopCriteria::iterations(40),
                        None,
                    )
                    .unwrap();
                    for w in t.records.windows(2) {
                        // fixed steps chatter once a single step overshoots x*;
                        // descent is claimed while the step is shorter than ||x - x*||
                        let step_len = eta * crate::flows::flow_speed(&flow, &w[0].x).unwrap();
                        if w[0].grad_norm2 > flow.grad_threshold && step_len < norm2(&w[0].x) {
                            assert!(w[1].f < w[0].f, "{flow} eta={eta} at k={}", w[0].k);
                        }
                    }
                }
            }
        }
    }
}
