//! Configuration-driven experiment sweeps, artifact output and the CLI.

mod cli;
mod config;
mod output;
mod runner;

pub use cli::cli_main;
pub use config::{
    load_config, parse_config, preset, AnalysisConfig, BatchConfig, Bound, DominanceConfig,
    ExperimentConfig, FlowConfig, InitConfig, InitMode, ObjectiveConfig, OptimizerConfig,
    OutputConfig, OutputFormat, SchemeName, StopConfig, PRESETS,
};
pub use output::{emit_csv, fmt_f64, CSV_HEADER};
pub use runner::{
    closeness_table, compare_medians, evaluate_bounds, median_iterations, optimizer_stats,
    run_experiment, trajectory_path, BoundsEntry, ClosenessRow, OptimizerStats, RunResult,
    RunSummary, NOT_REACHED, WORKERS_ENV,
};

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::objectives::{finite_difference_check, Mlp, Objective, PthPower, Quadratic, Rosenbrock};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no config file or preset named {0:?}")]
    NotFound(PathBuf),
    #[error("{file}: {inner}")]
    InFile {
        file: PathBuf,
        inner: Box<BenchError>,
    },
    #[error("run failed: {0}")]
    Run(String),
}

impl BenchError {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        BenchError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_file(self, file: &Path) -> Self {
        BenchError::InFile {
            file: file.to_path_buf(),
            inner: Box::new(self),
        }
    }

    /// True for errors in the user's input rather than in running it.
    pub fn is_validation(&self) -> bool {
        match self {
            BenchError::Parse(_) | BenchError::Validation { .. } | BenchError::NotFound(_) => true,
            BenchError::InFile { inner, .. } => inner.is_validation(),
            BenchError::Io { .. } | BenchError::Run(_) => false,
        }
    }
}

/// Outcome of checking one objective's gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub objective: String,
    pub tolerance: f64,
    pub worst: f64,
    pub points: usize,
    pub failure: Option<String>,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.worst <= self.tolerance
    }
}

/// Every shipped objective with its default parameters, the tolerance its
/// analytic gradient must meet, and the half-width of the sampling box.
pub fn shipped_objectives() -> Vec<(Box<dyn Objective>, f64, f64)> {
    vec![
        (Box::new(Quadratic::new(1.0, 3).expect("valid")), 1e-9, 2.0),
        (
            Box::new(Rosenbrock::new(1.0, 100.0).expect("valid")),
            1e-6,
            2.0,
        ),
        (Box::new(PthPower::new(4.0, 3).expect("valid")), 1e-6, 2.0),
        (
            Box::new(Mlp::new(&[4, 16, 1], 256, 0.1, 7).expect("valid")),
            1e-4,
            1.0,
        ),
    ]
}

/// Runs the central-difference check (step `1e-5`) at `points` seeded
/// uniform points per objective. `only` restricts to one objective name.
pub fn check_gradients(
    only: Option<&str>,
    points: usize,
    seed: u64,
) -> Result<Vec<GradientCheck>, BenchError> {
    let objectives: Vec<_> = shipped_objectives()
        .into_iter()
        .filter(|(o, _, _)| only.is_none_or(|n| n == o.name()))
        .collect();
    if objectives.is_empty() {
        let names: Vec<String> = shipped_objectives()
            .iter()
            .map(|(o, _, _)| o.name().to_string())
            .collect();
        return Err(BenchError::validation(
            "objective",
            format!(
                "unknown objective {:?}; expected one of {}",
                only.unwrap_or(""),
                names.join(", ")
            ),
        ));
    }
    Ok(objectives
        .iter()
        .map(|(obj, tolerance, half)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            let mut failure = None;
            for _ in 0..points {
                let x: Vec<f64> = (0..obj.dimension())
                    .map(|_| rng.random_range(-half..*half))
                    .collect();
                match finite_difference_check(obj.as_ref(), &x, 1e-5) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            GradientCheck {
                objective: obj.name().to_string(),
                tolerance: *tolerance,
                worst,
                points,
                failure,
            }
        })
        .collect())
}
