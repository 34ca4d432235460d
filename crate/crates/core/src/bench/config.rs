use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::BenchError;
use crate::analysis::EnvelopeExponent;
use crate::flows::{FlowKind, FlowSpec, QOrder, DEFAULT_GRAD_THRESHOLD};
use crate::integrators::{AdamParams, DiscretizerConfig, RkTableau, Scheme, StopCriteria};
use crate::objectives::{Mlp, Objective, PthPower, Quadratic, Rosenbrock};

/// Presets shipped with the crate, as `(name, TOML source)`.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "rosenbrock_fig1",
        include_str!("../../../../configs/rosenbrock_fig1.toml"),
    ),
    (
        "quadratic_bounds",
        include_str!("../../../../configs/quadratic_bounds.toml"),
    ),
    (
        "mlp_desk",
        include_str!("../../../../configs/mlp_desk.toml"),
    ),
    (
        "closeness_sweep",
        include_str!("../../../../configs/closeness_sweep.toml"),
    ),
];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub objective: ObjectiveConfig,
    pub optimizers: Vec<OptimizerConfig>,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default)]
    pub batch: Option<BatchConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Parallel cells; 0 lets the pool decide. `FINITEFLOW_WORKERS` overrides.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Quadratic {
        #[serde(default = "one")]
        mu: f64,
        #[serde(default = "two")]
        dimension: usize,
    },
    Rosenbrock {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "hundred")]
        b: f64,
        #[serde(default)]
        radius: Option<f64>,
    },
    PthPower {
        p: f64,
        #[serde(default = "one_usize")]
        dimension: usize,
    },
    Mlp {
        layer_widths: Vec<usize>,
        dataset_size: usize,
        #[serde(default)]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn one_usize() -> usize {
    1
}
fn hundred() -> f64 {
    100.0
}

impl ObjectiveConfig {
    pub fn build(&self) -> Result<Box<dyn Objective>, BenchError> {
        let built: Result<Box<dyn Objective>, _> = match self {
            ObjectiveConfig::Quadratic { mu, dimension } => {
                Quadratic::new(*mu, *dimension).map(|o| Box::new(o) as _)
            }
            ObjectiveConfig::Rosenbrock { a, b, radius } => match radius {
                Some(r) => Rosenbrock::with_radius(*a, *b, *r),
                None => Rosenbrock::new(*a, *b),
            }
            .map(|o| Box::new(o) as _),
            ObjectiveConfig::PthPower { p, dimension } => {
                PthPower::new(*p, *dimension).map(|o| Box::new(o) as _)
            }
            ObjectiveConfig::Mlp {
                layer_widths,
                dataset_size,
                noise_std,
                seed,
            } => Mlp::new(layer_widths, *dataset_size, *noise_std, *seed).map(|o| Box::new(o) as _),
        };
        built.map_err(|e| BenchError::validation("objective", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Euler,
    RungeKutta,
    NesterovLike,
    Gd,
    Nagd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub kind: FlowKind,
    #[serde(default)]
    pub q: Option<QOrder>,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "default_threshold")]
    pub grad_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_GRAD_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub epsilon: f64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: String,
    pub scheme: SchemeName,
    pub eta: f64,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    /// Momentum for `nesterov_like` and `nagd`.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Runge-Kutta weights.
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    #[serde(default)]
    pub adam: Option<AdamConfig>,
}

impl OptimizerConfig {
    pub fn build(&self, index: usize) -> Result<DiscretizerConfig, BenchError> {
        let field = |f: &str| format!("optimizers[{index}].{f}");
        let flow = || -> Result<FlowSpec, BenchError> {
            let fc = self
                .flow
                .as_ref()
                .ok_or_else(|| BenchError::validation(field("flow"), "required for this scheme"))?;
            let q = match (fc.kind, fc.q) {
                (FlowKind::Gf, q) => q.map_or(2.0, QOrder::as_f64),
                (_, Some(q)) => q.as_f64(),
                (_, None) => {
                    return Err(BenchError::validation(
                        field("flow.q"),
                        "required for RGF and SGF",
                    ))
                }
            };
            FlowSpec::new(fc.kind, q, fc.c, fc.grad_threshold)
                .map_err(|e| BenchError::validation(field("flow"), e.to_string()))
        };
        let beta = || {
            self.beta.ok_or_else(|| {
                BenchError::validation(field("beta"), "required for momentum schemes")
            })
        };
        let scheme = match self.scheme {
            SchemeName::Euler => Scheme::Euler { flow: flow()? },
            SchemeName::RungeKutta => {
                let alphas = self.alphas.clone().ok_or_else(|| {
                    BenchError::validation(field("alphas"), "required for runge_kutta")
                })?;
                let betas = self.betas.clone().unwrap_or_default();
                let tableau = RkTableau::new(alphas, betas)
                    .map_err(|e| BenchError::validation(field("alphas"), e.to_string()))?;
                Scheme::RungeKutta {
                    flow: flow()?,
                    tableau,
                }
            }
            SchemeName::NesterovLike => Scheme::NesterovLike {
                flow: flow()?,
                beta: beta()?,
            },
            SchemeName::Gd => Scheme::Gd,
            SchemeName::Nagd => Scheme::Nagd { beta: beta()? },
            SchemeName::Adam => {
                let a = self.adam.clone().unwrap_or(AdamConfig {
                    beta1: beta1(),
                    beta2: beta2(),
                    epsilon: adam_eps(),
                });
                Scheme::Adam(AdamParams {
                    beta1: a.beta1,
                    beta2: a.beta2,
                    epsilon: a.epsilon,
                })
            }
        };
        if !(self.eta > 0.0) {
            return Err(BenchError::validation(
                field("eta"),
                format!("must be positive, got {}", self.eta),
            ));
        }
        DiscretizerConfig::new(self.eta, scheme)
            .map_err(|e| BenchError::validation(field("scheme"), e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Fixed,
    UniformBox,
}

/// A bound given either per coordinate or as one value for all coordinates.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Bound {
    pub fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            Bound::Scalar(v) => vec![*v; n],
            Bound::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default)]
    pub mode: InitMode,
    #[serde(default)]
    pub x0: Option<Bound>,
    #[serde(default)]
    pub box_lo: Option<Bound>,
    #[serde(default)]
    pub box_hi: Option<Bound>,
    #[serde(default = "one_usize")]
    pub n_seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mode: InitMode::Fixed,
            x0: None,
            box_lo: None,
            box_hi: None,
            n_seeds: 1,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    #[serde(default = "max_iters")]
    pub max_iters: u64,
    #[serde(default = "grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub f_tol: f64,
    #[serde(default)]
    pub wall_limit: Option<f64>,
}

fn max_iters() -> u64 {
    100_000
}
fn grad_tol() -> f64 {
    1e-8
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            max_iters: max_iters(),
            grad_tol: grad_tol(),
            f_tol: 0.0,
            wall_limit: None,
        }
    }
}

impl StopConfig {
    pub fn criteria(&self) -> Result<StopCriteria, BenchError> {
        StopCriteria::new(self.max_iters, self.grad_tol, self.f_tol, self.wall_limit)
            .map_err(|e| BenchError::validation("stop", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominanceConfig {
    pub p: f64,
    pub mu: f64,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub run_bounds: bool,
    #[serde(default)]
    pub run_closeness: bool,
    /// Reference step; defaults to `eta / 100` of the optimizer at hand.
    #[serde(default)]
    pub h_ref: Option<f64>,
    /// Horizon for closeness; defaults to the settling-time bound.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Number of step-size halvings in the closeness table.
    #[serde(default)]
    pub halvings: Option<usize>,
    #[serde(default)]
    pub slack: Option<f64>,
    #[serde(default)]
    pub envelope_exponent: EnvelopeExponent,
    #[serde(default)]
    pub dominance: Option<DominanceConfig>,
}

impl AnalysisConfig {
    pub fn h_ref_for(&self, eta: f64) -> f64 {
        self.h_ref.unwrap_or(eta / 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "formats")]
    pub formats: Vec<OutputFormat>,
    #[serde(default = "one_usize")]
    pub trajectory_stride: usize,
}

fn formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: formats(),
            trajectory_stride: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| Path::new("results").join(&self.name))
    }

    pub fn writes(&self, format: OutputFormat) -> bool {
        self.output.formats.contains(&format)
    }

    /// Builds every optimizer, failing on the first invalid one.
    pub fn discretizers(&self) -> Result<Vec<DiscretizerConfig>, BenchError> {
        self.optimizers
            .iter()
            .enumerate()
            .map(|(i, o)| o.build(i))
            .collect()
    }

    /// Starting points, one per seed.
    pub fn initial_points(&self, dimension: usize) -> Result<Vec<Vec<f64>>, BenchError> {
        use rand::{Rng, SeedableRng};
        let init = &self.init;
        let check_len = |field: &str, v: &[f64]| {
            if v.len() != dimension {
                Err(BenchError::validation(
                    format!("init.{field}"),
                    format!(
                        "has {} entries, objective dimension is {dimension}",
                        v.len()
                    ),
                ))
            } else {
                Ok(())
            }
        };
        match init.mode {
            InitMode::Fixed => {
                let x0 = init
                    .x0
                    .as_ref()
                    .ok_or_else(|| {
                        BenchError::validation("init.x0", "required when mode = \"fixed\"")
                    })?
                    .expand(dimension);
                check_len("x0", &x0)?;
                Ok(vec![x0; init.n_seeds])
            }
            InitMode::UniformBox => {
                let lo = init
                    .box_lo
                    .as_ref()
                    .ok_or_else(|| {
                        BenchError::validation(
                            "init.box_lo",
                            "required when mode = \"uniform_box\"",
                        )
                    })?
                    .expand(dimension);
                let hi = init
                    .box_hi
                    .as_ref()
                    .ok_or_else(|| {
                        BenchError::validation(
                            "init.box_hi",
                            "required when mode = \"uniform_box\"",
                        )
                    })?
                    .expand(dimension);
                check_len("box_lo", &lo)?;
                check_len("box_hi", &hi)?;
                if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
                    return Err(BenchError::validation(
                        "init.box_hi",
                        "every entry must be >= box_lo",
                    ));
                }
                Ok((0..init.n_seeds)
                    .map(|s| {
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed_value(s));
                        lo.iter()
                            .zip(&hi)
                            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                            .collect()
                    })
                    .collect())
            }
        }
    }

    /// Seed value for seed index `s`; also keys its mini-batch stream.
    pub fn seed_value(&self, s: usize) -> u64 {
        self.init.base_seed.wrapping_add(s as u64)
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(BenchError::validation(
                "name",
                "must be non-empty and free of path separators",
            ));
        }
        if self.optimizers.is_empty() {
            return Err(BenchError::validation(
                "optimizers",
                "at least one optimizer is required",
            ));
        }
        let mut seen = HashSet::new();
        for (i, o) in self.optimizers.iter().enumerate() {
            if o.name.is_empty() || o.name.contains(['/', '\\']) {
                return Err(BenchError::validation(
                    format!("optimizers[{i}].name"),
                    "must be non-empty and free of path separators",
                ));
            }
            if !seen.insert(o.name.as_str()) {
                return Err(BenchError::validation(
                    format!("optimizers[{i}].name"),
                    format!("duplicate optimizer name {:?}", o.name),
                ));
            }
        }
        if self.init.n_seeds == 0 {
            return Err(BenchError::validation("init.n_seeds", "must be at least 1"));
        }
        if self.output.trajectory_stride == 0 {
            return Err(BenchError::validation(
                "output.trajectory_stride",
                "must be at least 1",
            ));
        }
        if let Some(h) = self.analysis.h_ref {
            if !(h > 0.0) {
                return Err(BenchError::validation(
                    "analysis.h_ref",
                    format!("must be positive, got {h}"),
                ));
            }
        }
        if let Some(t) = self.analysis.horizon {
            if !(t > 0.0) {
                return Err(BenchError::validation(
                    "analysis.horizon",
                    format!("must be positive, got {t}"),
                ));
            }
        }
        self.stop.criteria()?;
        let obj = self.objective.build()?;
        if let Some(b) = self.batch {
            if !obj.supports_batches() {
                return Err(BenchError::validation(
                    "batch",
                    format!("objective {} has no dataset", obj.name()),
                ));
            }
            let n = match &self.objective {
                ObjectiveConfig::Mlp { dataset_size, .. } => *dataset_size,
                _ => 0,
            };
            if b.batch_size == 0 || b.batch_size > n {
                return Err(BenchError::validation(
                    "batch.batch_size",
                    format!("must lie in [1, {n}], got {}", b.batch_size),
                ));
            }
        }
        self.discretizers()?;
        self.initial_points(obj.dimension())?;
        Ok(())
    }
}

/// Parses and validates a config from TOML text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, BenchError> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| BenchError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a config from a file path, or from a shipped preset when no such
/// file exists and the argument names one.
pub fn load_config(path_or_preset: impl AsRef<Path>) -> Result<ExperimentConfig, BenchError> {
    let path = path_or_preset.as_ref();
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        return parse_config(&text).map_err(|e| e.in_file(path));
    }
    if let Some((_, text)) = path
        .to_str()
        .and_then(|s| PRESETS.iter().find(|(n, _)| *n == s))
    {
        return parse_config(text);
    }
    Err(BenchError::NotFound(path.to_path_buf()))
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_config(text).expect("shipped presets are valid"))
}
