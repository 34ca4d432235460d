use super::{ConfigError, DiscretizerConfig, Scheme, StepError, StepperState};
use crate::flows::{flow_eval, FlowSpec};
use crate::objectives::Objective;

fn failure(k: u64, reason: impl Into<String>) -> StepError {
    StepError::NumericalFailure {
        k,
        reason: reason.into(),
    }
}

fn velocity(flow: &FlowSpec, grad: &[f64], k: u64) -> Result<Vec<f64>, StepError> {
    flow_eval(flow, grad).map_err(|e| failure(k, e.to_string()))
}

fn check_finite(x: &[f64], k: u64) -> Result<(), StepError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(failure(k, format!("iterate component {i} is {}", x[i]))),
        None => Ok(()),
    }
}

/// Advances `state` by one step of the configured scheme.
///
/// `grad` supplies the gradient at arbitrary points; it is a full or a
/// mini-batch gradient depending on the caller. On error the state is left
/// untouched.
pub fn step(
    cfg: &DiscretizerConfig,
    grad: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    state: &mut StepperState,
) -> Result<(), StepError> {
    let eta = cfg.eta();
    let k = state.k;
    let n = state.x.len();
    match cfg.scheme() {
        Scheme::Euler { flow } => {
            let v = velocity(flow, &grad(&state.x), k)?;
            let next: Vec<f64> = state.x.iter().zip(&v).map(|(x, v)| x + eta * v).collect();
            check_finite(&next, k)?;
            state.x = next;
        }
        Scheme::RungeKutta { flow, tableau } => {
            let mut stages: Vec<Vec<f64>> = Vec::with_capacity(tableau.stages());
            stages.push(velocity(flow, &grad(&state.x), k)?);
            for i in 1..tableau.stages() {
                let mut y = state.x.clone();
                for (j, fj) in stages.iter().enumerate() {
                    let b = tableau.betas()[j];
                    for (yc, f) in y.iter_mut().zip(fj) {
                        *yc += eta * b * f;
                    }
                }
                check_finite(&y, k)?;
                stages.push(velocity(flow, &grad(&y), k)?);
                debug_assert_eq!(stages.len(), i + 1);
            }
            let mut incr = vec![0.0; n];
            for (a, fi) in tableau.alphas().iter().zip(&stages) {
                for (s, f) in incr.iter_mut().zip(fi) {
                    *s += a * f;
                }
            }
            let next: Vec<f64> = state
                .x
                .iter()
                .zip(&incr)
                .map(|(x, d)| x + eta * d)
                .collect();
            check_finite(&next, k)?;
            state.x = next;
        }
        Scheme::NesterovLike { flow, beta } => {
            let look: Vec<f64> = state
                .x
                .iter()
                .zip(&state.y)
                .map(|(x, y)| x + beta * y)
                .collect();
            let v = velocity(flow, &grad(&look), k)?;
            let next: Vec<f64> = state
                .x
                .iter()
                .zip(&v)
                .zip(&state.y)
                .map(|((x, v), y)| x + eta * v + beta * y)
                .collect();
            check_finite(&next, k)?;
            state.y = next.iter().zip(&state.x).map(|(a, b)| a - b).collect();
            state.x = next;
        }
        Scheme::Gd => {
            let g = grad(&state.x);
            let next: Vec<f64> = state.x.iter().zip(&g).map(|(x, g)| x - eta * g).collect();
            check_finite(&next, k)?;
            state.x = next;
        }
        Scheme::Nagd { beta } => {
            // look-ahead point, then a gradient step from it
            let look: Vec<f64> = state
                .x
                .iter()
                .zip(&state.y)
                .map(|(x, y)| x + beta * y)
                .collect();
            let g = grad(&look);
            let next: Vec<f64> = look.iter().zip(&g).map(|(l, g)| l - eta * g).collect();
            check_finite(&next, k)?;
            state.y = next.iter().zip(&state.x).map(|(a, b)| a - b).collect();
            state.x = next;
        }
        Scheme::Adam(p) => {
            let g = grad(&state.x);
            let t = (k + 1) as i32;
            let bc1 = 1.0 - p.beta1.powi(t);
            let bc2 = 1.0 - p.beta2.powi(t);
            let mut m = state.m.clone();
            let mut v = state.v.clone();
            let mut next = state.x.clone();
            for i in 0..n {
                m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
                v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                next[i] -= eta * m_hat / (v_hat.sqrt() + p.epsilon);
            }
            check_finite(&next, k)?;
            state.m = m;
            state.v = v;
            state.x = next;
        }
    }
    state.k += 1;
    Ok(())
}

fn step_checked(
    cfg: &DiscretizerConfig,
    obj: &dyn Objective,
    state: &StepperState,
    expected: &'static str,
    name: &'static str,
) -> Result<StepperState, StepError> {
    if cfg.scheme().label() != expected {
        return Err(ConfigError::WrongScheme {
            scheme: cfg.scheme().label(),
            step: name,
        }
        .into());
    }
    let mut next = state.clone();
    step(cfg, &mut |x| obj.gradient(x), &mut next)?;
    Ok(next)
}

/// Forward Euler on the configured flow: `x+ = x + eta F(x)`.
pub fn step_euler(
    cfg: &DiscretizerConfig,
    obj: &dyn Objective,
    state: &StepperState,
) -> Result<StepperState, StepError> {
    step_checked(cfg, obj, state, "euler", "step_euler")
}

pub fn step_rk(
    cfg: &DiscretizerConfig,
    obj: &dyn Objective,
    state: &StepperState,
) -> Result<StepperState, StepError> {
    step_checked(cfg, obj, state, "runge_kutta", "step_rk")
}

/// `x+ = x + eta F(x + beta y) + beta y`, `y+ = x+ - x`.
pub fn step_nesterov_like(
    cfg: &DiscretizerConfig,
    obj: &dyn Objective,
    state: &StepperState,
) -> Result<StepperState, StepError> {
    step_checked(cfg, obj, state, "nesterov_like", "step_nesterov_like")
}

pub fn step_gd(
    cfg: &DiscretizerConfig,
    obj: &dyn Objective,
    state: &StepperState,
) -> Result<StepperState, StepError> {
    step_checked(cfg, obj, state, "gd", "step_gd")
}

/// Nesterov accelerated gradient with constant `eta` and `beta`.
pub fn step_nagd(
    cfg: &DiscretizerConfig,
    obj: &dyn Objective,
    state: &StepperState,
) -> Result<StepperState, StepError> {
    step_checked(cfg, obj, state, "nagd", "step_nagd")
}

pub fn step_adam(
    cfg: &DiscretizerConfig,
    obj: &dyn Objective,
    state: &StepperState,
) -> Result<StepperState, StepError> {
    step_checked(cfg, obj, state, "adam", "step_adam")
}
