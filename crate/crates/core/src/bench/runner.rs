use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, OutputFormat};
use super::output::{emit_csv, fmt_f64, io_err, write_text};
use super::BenchError;
use crate::analysis::{
    check_gradient_dominance, closeness_epsilon, energy_decay_envelope_with, k_star,
    settling_time_bound, verify_envelope, weak_bound_with, BoundReport, DominanceParams,
    DominanceReport,
};
use crate::flows::FlowSpec;
use crate::integrators::{
    integrate_reference, run, DiscretizerConfig, StopCriteria, TerminalReason, Trajectory,
};
use crate::objectives::{BatchContext, Objective};

/// Iterations-to-tolerance value for runs that never met a tolerance.
pub const NOT_REACHED: i64 = -1;

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "FINITEFLOW_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub optimizer: String,
    pub seed: usize,
    pub final_f: f64,
    pub final_f_gap: f64,
    /// Step at which the first tolerance was met, or [`NOT_REACHED`].
    pub iters_to_tol: i64,
    pub steps: u64,
    pub wall_s: f64,
    pub terminal_reason: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerStats {
    pub optimizer: String,
    pub runs: usize,
    pub reached: usize,
    /// Median with unreached runs counted as infinitely slow; [`NOT_REACHED`]
    /// when that median is itself unreached.
    pub median_iters: f64,
    pub min_iters: i64,
    pub max_iters: i64,
    pub median_final_f: f64,
    pub min_final_f: f64,
    pub max_final_f: f64,
    pub median_final_f_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsEntry {
    pub optimizer: String,
    pub seed: usize,
    pub params: DominanceParams,
    pub c: f64,
    pub grad_norm0: f64,
    pub f_gap0: f64,
    pub t_star_bound: f64,
    /// Time at which the reference solution met its gradient tolerance.
    pub reference_arrival: Option<f64>,
    pub settling_passed: bool,
    pub envelope: BoundReport,
    pub k_star: f64,
    pub lipschitz: f64,
    pub epsilon: Option<f64>,
    pub weak: Option<BoundReport>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub output_dir: PathBuf,
    pub runs: Vec<RunResult>,
    pub optimizers: Vec<OptimizerStats>,
    pub dominance: Option<DominanceReport>,
    pub bounds: Vec<BoundsEntry>,
}

impl RunSummary {
    pub fn stats(&self, optimizer: &str) -> Option<&OptimizerStats> {
        self.optimizers.iter().find(|s| s.optimizer == optimizer)
    }
}

/// Trajectory file for one cell; depends only on the optimizer name and seed.
pub fn trajectory_path(dir: &Path, optimizer: &str, seed: usize) -> PathBuf {
    dir.join("trajectories")
        .join(format!("{optimizer}__seed{seed}.csv"))
}

fn sentinel_key(iters: i64) -> f64 {
    if iters < 0 {
        f64::INFINITY
    } else {
        iters as f64
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Median of iterations-to-tolerance values, treating [`NOT_REACHED`] as
/// slower than any reached count.
pub fn median_iterations(iters: &[i64]) -> f64 {
    let m = median(&sorted(iters.iter().map(|&i| sentinel_key(i)).collect()));
    if m.is_infinite() {
        NOT_REACHED as f64
    } else {
        m
    }
}

pub fn optimizer_stats(optimizer: &str, runs: &[&RunResult]) -> OptimizerStats {
    let iters: Vec<i64> = runs.iter().map(|r| r.iters_to_tol).collect();
    let reached: Vec<i64> = iters.iter().copied().filter(|&i| i >= 0).collect();
    let finals = sorted(runs.iter().map(|r| r.final_f).collect());
    let gaps = sorted(runs.iter().map(|r| r.final_f_gap).collect());
    OptimizerStats {
        optimizer: optimizer.to_string(),
        runs: runs.len(),
        reached: reached.len(),
        median_iters: median_iterations(&iters),
        min_iters: reached.iter().copied().min().unwrap_or(NOT_REACHED),
        max_iters: if reached.len() == iters.len() {
            reached.iter().copied().max().unwrap_or(NOT_REACHED)
        } else {
            NOT_REACHED
        },
        median_final_f: median(&finals),
        min_final_f: finals.first().copied().unwrap_or(f64::NAN),
        max_final_f: finals.last().copied().unwrap_or(f64::NAN),
        median_final_f_gap: median(&gaps),
    }
}

fn result_of(optimizer: &str, seed: usize, traj: &Trajectory) -> RunResult {
    let last = traj.last().expect("runs record the initial point");
    RunResult {
        optimizer: optimizer.to_string(),
        seed,
        final_f: last.f,
        final_f_gap: traj.f_gap(last),
        iters_to_tol: if traj.terminal_reason.reached_tolerance() {
            last.k as i64
        } else {
            NOT_REACHED
        },
        steps: last.k,
        wall_s: last.wall_s,
        terminal_reason: traj.terminal_reason.to_string(),
        error: None,
    }
}

fn failed_result(optimizer: &str, seed: usize, error: String) -> RunResult {
    RunResult {
        optimizer: optimizer.to_string(),
        seed,
        final_f: f64::NAN,
        final_f_gap: f64::NAN,
        iters_to_tol: NOT_REACHED,
        steps: 0,
        wall_s: 0.0,
        terminal_reason: TerminalReason::NumericalFailure.to_string(),
        error: Some(error),
    }
}

/// `f` and `f - f*` sampled every `stride` steps, for the mean curves.
fn curve_of(traj: &Trajectory, stride: usize) -> Vec<(f64, f64)> {
    traj.records
        .iter()
        .filter(|r| r.k % stride as u64 == 0)
        .map(|r| (r.f, traj.f_gap(r)))
        .collect()
}

fn worker_count(cfg: &ExperimentConfig) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(cfg.workers)
}

pub(crate) fn with_pool<T: Send>(
    cfg: &ExperimentConfig,
    job: impl FnOnce() -> T + Send,
) -> Result<T, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg))
        .build()
        .map_err(|e| BenchError::Run(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// Dominance order and constant for the bounds: the config's, else the
/// objective's own metadata.
fn dominance_constants(cfg: &ExperimentConfig, obj: &dyn Objective) -> Option<(f64, f64)> {
    if let Some(d) = &cfg.analysis.dominance {
        return Some((d.p, d.mu));
    }
    let opt = obj.optimum()?;
    Some((opt.p, opt.mu?))
}

pub(crate) struct Cell<'a> {
    pub optimizer: &'a str,
    pub disc: &'a DiscretizerConfig,
    pub seed: usize,
    pub x0: &'a [f64],
}

/// Settling, envelope and weak-bound verdicts for one discrete run.
pub(crate) fn bounds_for(
    cfg: &ExperimentConfig,
    obj: &dyn Objective,
    cell: &Cell<'_>,
    traj: &Trajectory,
) -> Option<BoundsEntry> {
    let flow = cell.disc.scheme().flow()?;
    let (p, mu) = dominance_constants(cfg, obj)?;
    let f_star = obj.f_star()?;
    let params = DominanceParams::new(p, mu, flow.q).ok()?;
    if !params.is_finite_time() || params.alpha >= 1.0 {
        return None;
    }
    let slack = cfg.analysis.slack.unwrap_or(1e-6);
    let form = cfg.analysis.envelope_exponent;
    let eta = cell.disc.eta();
    let first = traj.records.first()?;
    let grad_norm0 = first.grad_norm2;
    let f_gap0 = first.f - f_star;
    let c = flow.c;
    let t_star_bound = settling_time_bound(&params, c, grad_norm0).ok()?;
    let k_star = k_star(&params, c, eta, f_gap0.max(0.0)).ok()?;
    let mut note = None;

    let h_ref = cfg.analysis.h_ref_for(eta);
    let ref_tol = if cfg.stop.grad_tol > 0.0 {
        cfg.stop.grad_tol
    } else {
        1e-10
    };
    let horizon = cfg.analysis.horizon.unwrap_or(t_star_bound);
    let ref_span = horizon.max(t_star_bound) * 1.5 + h_ref;
    let ref_stop = StopCriteria::new((ref_span / h_ref).ceil() as u64, ref_tol, 0.0, None).ok()?;
    let reference = match integrate_reference(flow, obj, cell.x0, h_ref, &ref_stop) {
        Ok(r) => r,
        Err(e) => {
            note = Some(format!("reference integration failed: {e}"));
            Trajectory {
                records: vec![],
                terminal_reason: TerminalReason::NumericalFailure,
                f_star: Some(f_star),
            }
        }
    };
    let reference_arrival = (reference.terminal_reason == TerminalReason::GradTol)
        .then(|| reference.last().map(|r| r.t))
        .flatten();
    let settling_passed = reference_arrival.is_some_and(|t| t <= t_star_bound * (1.0 + 1e-9));
    let mut envelope = verify_envelope(
        &reference,
        |r| energy_decay_envelope_with(&params, c, f_gap0, r.t, form).unwrap_or(f64::NAN),
        f_star,
        slack,
    );
    if reference.is_empty() {
        envelope.passed = false;
    }
    envelope.t_star_bound = Some(t_star_bound);

    let lipschitz = traj
        .records
        .iter()
        .map(|r| r.grad_norm2)
        .fold(0.0, f64::max);
    let epsilon = if cfg.analysis.run_closeness && !reference.is_empty() {
        let steps = (horizon / eta).ceil() as u64 + 1;
        let disc_stop = StopCriteria::new(steps, 0.0, 0.0, None).ok()?;
        let long = run(cell.disc, obj, cell.x0, &disc_stop, None).ok()?;
        match closeness_epsilon(&reference, &long, horizon, eta) {
            Ok(e) => Some(e),
            Err(e) => {
                note = Some(format!("closeness unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    let weak = epsilon.map(|eps| {
        let mut report = verify_envelope(
            traj,
            |r| {
                weak_bound_with(&params, c, eta, f_gap0.max(0.0), lipschitz, eps, r.k, form)
                    .unwrap_or(f64::NAN)
            },
            f_star,
            slack,
        );
        report.k_star = Some(k_star);
        report
    });

    Some(BoundsEntry {
        optimizer: cell.optimizer.to_string(),
        seed: cell.seed,
        params,
        c,
        grad_norm0,
        f_gap0,
        t_star_bound,
        reference_arrival,
        settling_passed,
        envelope,
        k_star,
        lipschitz,
        epsilon,
        weak,
        note,
    })
}

/// `(f, f - f*)` per recorded step.
type Curve = Vec<(f64, f64)>;

struct CellOutput {
    result: RunResult,
    curve: Option<Curve>,
    bounds: Option<BoundsEntry>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    obj: &dyn Objective,
    cell: &Cell<'_>,
    stop: &StopCriteria,
    out_dir: &Path,
) -> Result<CellOutput, BenchError> {
    let batch = cfg
        .batch
        .map(|b| {
            BatchContext::new(
                cfg.seed_value(cell.seed),
                b.batch_size,
                obj_dataset_size(cfg),
            )
        })
        .transpose()
        .map_err(|e| BenchError::validation("batch", e.to_string()))?;
    let stride = cfg.output.trajectory_stride;
    let path = trajectory_path(out_dir, cell.optimizer, cell.seed);
    let traj = match run(cell.disc, obj, cell.x0, stop, batch.as_ref()) {
        Ok(t) => t,
        Err(e) => {
            // keep one file per cell even when the run could not start
            if cfg.writes(OutputFormat::Csv) {
                emit_csv(
                    &Trajectory {
                        records: vec![],
                        terminal_reason: TerminalReason::NumericalFailure,
                        f_star: obj.f_star(),
                    },
                    &path,
                )?;
            }
            return Ok(CellOutput {
                result: failed_result(cell.optimizer, cell.seed, e.to_string()),
                curve: None,
                bounds: None,
            });
        }
    };
    if cfg.writes(OutputFormat::Csv) {
        emit_csv(&traj.thinned(stride), &path)?;
    }
    let bounds = if cfg.analysis.run_bounds && batch.is_none() {
        bounds_for(cfg, obj, cell, &traj)
    } else {
        None
    };
    Ok(CellOutput {
        result: result_of(cell.optimizer, cell.seed, &traj),
        curve: Some(curve_of(&traj, stride)),
        bounds,
    })
}

fn obj_dataset_size(cfg: &ExperimentConfig) -> usize {
    match &cfg.objective {
        super::config::ObjectiveConfig::Mlp { dataset_size, .. } => *dataset_size,
        _ => 0,
    }
}

fn mean_curves_csv(names: &[&str], cells: &[(usize, Option<Curve>)], stride: usize) -> String {
    let mut out = String::from("optimizer,k,mean_f,mean_f_gap,runs\n");
    for (i, name) in names.iter().enumerate() {
        let curves: Vec<&Vec<(f64, f64)>> = cells
            .iter()
            .filter(|(o, _)| *o == i)
            .filter_map(|(_, c)| c.as_ref())
            .collect();
        let len = curves.iter().map(|c| c.len()).max().unwrap_or(0);
        for j in 0..len {
            // finished runs hold their final value
            let (sf, sg) = curves.iter().fold((0.0, 0.0), |(sf, sg), c| {
                let (f, g) = c[j.min(c.len() - 1)];
                (sf + f, sg + g)
            });
            let n = curves.len() as f64;
            let _ = writeln!(
                out,
                "{name},{},{},{},{}",
                j * stride,
                fmt_f64(sf / n),
                fmt_f64(sg / n),
                curves.len()
            );
        }
    }
    out
}

fn summary_csv(runs: &[RunResult]) -> String {
    let mut out = String::from(
        "optimizer,seed,final_f,final_f_gap,iters_to_tol,steps,wall_s,terminal_reason,error\n",
    );
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.optimizer,
            r.seed,
            fmt_f64(r.final_f),
            fmt_f64(r.final_f_gap),
            r.iters_to_tol,
            r.steps,
            fmt_f64(r.wall_s),
            r.terminal_reason,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        );
    }
    out
}

fn to_json<T: Serialize>(value: &T) -> Result<String, BenchError> {
    serde_json::to_string_pretty(value)
        .map_err(|e| BenchError::Run(format!("serializing results: {e}")))
}

/// Runs every (optimizer, seed) cell and writes the artifacts into
/// `cfg.output_dir()`:
///
/// - `trajectories/<optimizer>__seed<i>.csv` (see [`emit_csv`]),
/// - `summary.csv` with one row per cell and `summary.json` with the
///   per-optimizer statistics as well,
/// - `mean_curves.csv`, the mean over seeds of `f` and `f - f*`,
/// - `bounds.json` when `analysis.run_bounds` is set.
///
/// A run that fails is recorded in the summary and does not stop the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, BenchError> {
    let obj = cfg.objective.build()?;
    let discs = cfg.discretizers()?;
    let starts = cfg.initial_points(obj.dimension())?;
    let stop = cfg.stop.criteria()?;
    let out_dir = cfg.output_dir();
    if cfg.writes(OutputFormat::Csv) {
        let traj_dir = out_dir.join("trajectories");
        std::fs::create_dir_all(&traj_dir).map_err(io_err(&traj_dir))?;
    } else {
        std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    }

    let names: Vec<&str> = cfg.optimizers.iter().map(|o| o.name.as_str()).collect();
    let cells: Vec<(usize, usize)> = (0..discs.len())
        .flat_map(|o| (0..starts.len()).map(move |s| (o, s)))
        .collect();
    let outputs: Vec<Result<CellOutput, BenchError>> = with_pool(cfg, || {
        cells
            .par_iter()
            .map(|&(o, s)| {
                let cell = Cell {
                    optimizer: names[o],
                    disc: &discs[o],
                    seed: s,
                    x0: &starts[s],
                };
                run_cell(cfg, obj.as_ref(), &cell, &stop, &out_dir)
            })
            .collect()
    })?;

    let mut runs = Vec::with_capacity(cells.len());
    let mut curves = Vec::with_capacity(cells.len());
    let mut bounds = Vec::new();
    for (&(o, _), out) in cells.iter().zip(outputs) {
        let out = out?;
        runs.push(out.result);
        curves.push((o, out.curve));
        bounds.extend(out.bounds);
    }
    let optimizers = names
        .iter()
        .map(|n| {
            optimizer_stats(
                n,
                &runs
                    .iter()
                    .filter(|r| r.optimizer == *n)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();

    let dominance = match &cfg.analysis.dominance {
        Some(d) if d.n_samples > 0 => {
            let radius = d
                .radius
                .or_else(|| {
                    obj.optimum()
                        .map(|o| o.neighborhood_radius)
                        .filter(|r| r.is_finite())
                })
                .unwrap_or(1.0);
            check_gradient_dominance(obj.as_ref(), d.p, d.mu, radius, d.n_samples, d.seed).ok()
        }
        _ => None,
    };

    let summary = RunSummary {
        name: cfg.name.clone(),
        output_dir: out_dir.clone(),
        runs,
        optimizers,
        dominance,
        bounds,
    };
    if cfg.writes(OutputFormat::Csv) {
        write_text(&out_dir.join("summary.csv"), &summary_csv(&summary.runs))?;
        write_text(
            &out_dir.join("mean_curves.csv"),
            &mean_curves_csv(&names, &curves, cfg.output.trajectory_stride),
        )?;
    }
    if cfg.writes(OutputFormat::Json) {
        write_text(&out_dir.join("summary.json"), &to_json(&summary)?)?;
        if cfg.analysis.run_bounds {
            write_text(&out_dir.join("bounds.json"), &to_json(&summary.bounds)?)?;
        }
    }
    Ok(summary)
}

/// Bounds for fresh runs of every flow-based optimizer, without writing
/// trajectories.
pub fn evaluate_bounds(cfg: &ExperimentConfig) -> Result<Vec<BoundsEntry>, BenchError> {
    let obj = cfg.objective.build()?;
    let discs = cfg.discretizers()?;
    let starts = cfg.initial_points(obj.dimension())?;
    let stop = cfg.stop.criteria()?;
    let names: Vec<&str> = cfg.optimizers.iter().map(|o| o.name.as_str()).collect();
    let cells: Vec<(usize, usize)> = (0..discs.len())
        .flat_map(|o| (0..starts.len()).map(move |s| (o, s)))
        .collect();
    let entries: Vec<Result<Option<BoundsEntry>, BenchError>> = with_pool(cfg, || {
        cells
            .par_iter()
            .map(|&(o, s)| {
                let cell = Cell {
                    optimizer: names[o],
                    disc: &discs[o],
                    seed: s,
                    x0: &starts[s],
                };
                let traj = run(cell.disc, obj.as_ref(), cell.x0, &stop, None)
                    .map_err(|e| BenchError::Run(e.to_string()))?;
                Ok(bounds_for(cfg, obj.as_ref(), &cell, &traj))
            })
            .collect()
    })?;
    let mut out = Vec::new();
    for e in entries {
        out.extend(e?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosenessRow {
    pub optimizer: String,
    pub eta: f64,
    pub h_ref: f64,
    pub horizon: f64,
    pub epsilon: f64,
}

/// `eps(eta)` for `eta, eta/2, ...` (`analysis.halvings` halvings, default 2)
/// for every flow-based optimizer, started from the first seed's point.
pub fn closeness_table(cfg: &ExperimentConfig) -> Result<Vec<ClosenessRow>, BenchError> {
    let obj = cfg.objective.build()?;
    let discs = cfg.discretizers()?;
    let x0 = cfg.initial_points(obj.dimension())?.swap_remove(0);
    let halvings = cfg.analysis.halvings.unwrap_or(2);
    let ref_tol = if cfg.stop.grad_tol > 0.0 {
        cfg.stop.grad_tol
    } else {
        1e-10
    };
    let mut jobs = Vec::new();
    for (o, disc) in discs.iter().enumerate() {
        let Some(flow) = disc.scheme().flow() else {
            continue;
        };
        let horizon = closeness_horizon(cfg, obj.as_ref(), flow, &x0)?;
        for i in 0..=halvings {
            let eta = disc.eta() / f64::from(1u32 << i);
            jobs.push((
                o,
                disc.with_eta(eta)
                    .map_err(|e| BenchError::Run(e.to_string()))?,
                *flow,
                horizon,
            ));
        }
    }
    let rows: Vec<Result<ClosenessRow, BenchError>> = with_pool(cfg, || {
        jobs.par_iter()
            .map(|(o, disc, flow, horizon)| {
                let eta = disc.eta();
                let h_ref = cfg
                    .analysis
                    .h_ref
                    .map_or(eta / 100.0, |h| h.min(eta / 10.0));
                let ref_stop =
                    StopCriteria::new((horizon / h_ref).ceil() as u64 + 1, ref_tol, 0.0, None)
                        .map_err(|e| BenchError::Run(e.to_string()))?;
                let reference = integrate_reference(flow, obj.as_ref(), &x0, h_ref, &ref_stop)
                    .map_err(|e| BenchError::Run(e.to_string()))?;
                let disc_stop =
                    StopCriteria::new((horizon / eta).ceil() as u64 + 1, 0.0, 0.0, None)
                        .map_err(|e| BenchError::Run(e.to_string()))?;
                let discrete = run(disc, obj.as_ref(), &x0, &disc_stop, None)
                    .map_err(|e| BenchError::Run(e.to_string()))?;
                let epsilon = closeness_epsilon(&reference, &discrete, *horizon, eta)
                    .map_err(|e| BenchError::Run(e.to_string()))?;
                Ok(ClosenessRow {
                    optimizer: cfg.optimizers[*o].name.clone(),
                    eta,
                    h_ref,
                    horizon: *horizon,
                    epsilon,
                })
            })
            .collect()
    })?;
    rows.into_iter().collect()
}

fn closeness_horizon(
    cfg: &ExperimentConfig,
    obj: &dyn Objective,
    flow: &FlowSpec,
    x0: &[f64],
) -> Result<f64, BenchError> {
    if let Some(t) = cfg.analysis.horizon {
        return Ok(t);
    }
    let (p, mu) = dominance_constants(cfg, obj).ok_or_else(|| {
        BenchError::validation(
            "analysis.horizon",
            "required when no dominance constant is known",
        )
    })?;
    let params = DominanceParams::new(p, mu, flow.q)
        .map_err(|e| BenchError::validation("analysis.dominance", e.to_string()))?;
    let g0 = crate::flows::norm2(&obj.gradient(x0));
    settling_time_bound(&params, flow.c, g0)
        .map_err(|e| BenchError::validation("analysis.horizon", e.to_string()))
}

/// Orders optimizers by median iterations with unreached runs last.
pub fn compare_medians(a: f64, b: f64) -> Ordering {
    let key = |v: f64| if v < 0.0 { f64::INFINITY } else { v };
    key(a).total_cmp(&key(b))
}
