//! Experiment configuration: TOML with `[data]`, `[split]`, `[problem]`,
//! `[solver]`, `[run]` and `[diagnostics]` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "WCC_OUTPUT_DIR";

pub const DEFAULT_ALPHA: f64 = 2.0;
pub const DEFAULT_THETA: f64 = 10.0;
pub const DEFAULT_OUTPUT_DIR: &str = "wcc-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PgSmdD1,
    PgSmdD2,
    PgSvrg,
    PlSmd,
    PlSvrg,
    ErmSgd,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PgSmdD1 => "pg-smd-d1",
            Self::PgSmdD2 => "pg-smd-d2",
            Self::PgSvrg => "pg-svrg",
            Self::PlSmd => "pl-smd",
            Self::PlSvrg => "pl-svrg",
            Self::ErmSgd => "erm-sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// LIBSVM file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub dim: usize,
    #[serde(default = "one")]
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "one")]
    pub neg_keep_fraction: f64,
    #[serde(default)]
    pub test_fraction: f64,
    /// Fraction of training labels flipped after the split.
    #[serde(default)]
    pub flip_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { neg_keep_fraction: 1.0, test_fraction: 0.0, flip_fraction: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// ℓ2-ball radius; unconstrained when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Outer iterations T (SGD steps for erm-sgd).
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_x_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_y_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_y: Option<f64>,
    /// Prox-linear step length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pl_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_dual_anchor: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_sizes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_starts: Option<Vec<usize>>,
    /// SGD steps between trace rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    /// Start point; the origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Record elapsed wall time in the trace (makes traces non-reproducible).
    #[serde(default)]
    pub wall_time: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(DEFAULT_OUTPUT_DIR)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, output_dir: default_output_dir(), wall_time: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Stationarity is evaluated on every `stride`-th trace row and the last.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_true")]
    pub moreau: bool,
    #[serde(default = "default_prox_tol")]
    pub prox_tol: f64,
    #[serde(default = "default_prox_max_iters")]
    pub prox_max_iters: usize,
}

fn default_stride() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_prox_tol() -> f64 {
    wcc_core::stationarity::DEFAULT_PROX_TOL
}
fn default_prox_max_iters() -> usize {
    wcc_core::stationarity::DEFAULT_PROX_MAX_ITERS
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            stride: default_stride(),
            moreau: true,
            prox_tol: default_prox_tol(),
            prox_max_iters: default_prox_max_iters(),
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(bad(key, format!("must be positive and finite, got {x}"))),
        _ => Ok(()),
    }
}

fn fraction(key: &str, v: f64, lo_open: bool) -> Result<(), CliError> {
    let ok = if lo_open { v > 0.0 && v <= 1.0 } else { (0.0..1.0).contains(&v) };
    if ok {
        Ok(())
    } else {
        let range = if lo_open { "(0, 1]" } else { "[0, 1)" };
        Err(bad(key, format!("must lie in {range}, got {v}")))
    }
}

impl SolverConfig {
    /// `(key, present)` for every method-specific key.
    fn keys(&self) -> [(&'static str, bool); 17] {
        [
            ("batch", self.batch.is_some()),
            ("gamma", self.gamma.is_some()),
            ("ratio_x", self.ratio_x.is_some()),
            ("ratio_y", self.ratio_y.is_some()),
            ("eta_x_scale", self.eta_x_scale.is_some()),
            ("eta_y_scale", self.eta_y_scale.is_some()),
            ("c_k", self.c_k.is_some()),
            ("stages", self.stages.is_some()),
            ("inner_len", self.inner_len.is_some()),
            ("eta_x", self.eta_x.is_some()),
            ("eta_y", self.eta_y.is_some()),
            ("pl_eta", self.pl_eta.is_some()),
            ("exact_dual_anchor", self.exact_dual_anchor.is_some()),
            ("step_sizes", self.step_sizes.is_some()),
            ("step_starts", self.step_starts.is_some()),
            ("record_every", self.record_every.is_some()),
            ("x0", self.x0.is_some()),
        ]
    }

    fn allowed(&self) -> &'static [&'static str] {
        match self.method {
            Method::PgSmdD1 => &["batch", "gamma", "ratio_x", "ratio_y", "eta_x_scale", "eta_y_scale", "x0"],
            Method::PgSmdD2 => &["batch", "gamma", "eta_x_scale", "eta_y_scale", "x0"],
            Method::PgSvrg => &["gamma", "c_k", "stages", "inner_len", "eta_x", "eta_y", "x0"],
            Method::PlSmd => &["batch", "inner_len", "eta_x", "eta_y", "pl_eta", "exact_dual_anchor", "x0"],
            Method::PlSvrg => &["stages", "inner_len", "eta_x", "eta_y", "pl_eta", "x0"],
            Method::ErmSgd => &["batch", "step_sizes", "step_starts", "record_every", "x0"],
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let allowed = self.allowed();
        for (key, present) in self.keys() {
            if present && !allowed.contains(&key) {
                return Err(bad(
                    &format!("solver.{key}"),
                    format!("not used by method {}", self.method.name()),
                ));
            }
        }
        if self.method != Method::ErmSgd && self.iterations == 0 {
            return Err(bad("solver.iterations", "must be at least 1"));
        }
        if self.batch == Some(0) {
            return Err(bad("solver.batch", "must be at least 1"));
        }
        for (k, v) in [
            ("solver.gamma", self.gamma),
            ("solver.ratio_x", self.ratio_x),
            ("solver.ratio_y", self.ratio_y),
            ("solver.eta_x_scale", self.eta_x_scale),
            ("solver.eta_y_scale", self.eta_y_scale),
            ("solver.c_k", self.c_k),
            ("solver.eta_x", self.eta_x),
            ("solver.eta_y", self.eta_y),
            ("solver.pl_eta", self.pl_eta),
        ] {
            positive(k, v)?;
        }
        if let Some(s) = self.stages {
            if s < 2 {
                return Err(bad("solver.stages", "must be at least 2"));
            }
        }
        if let Some(j) = self.inner_len {
            let min = if matches!(self.method, Method::PlSmd) { 2 } else { 1 };
            if j < min {
                return Err(bad("solver.inner_len", format!("must be at least {min}")));
            }
        }
        if self.record_every == Some(0) {
            return Err(bad("solver.record_every", "must be at least 1"));
        }
        if let Some(v) = &self.step_sizes {
            if v.is_empty() || v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(bad("solver.step_sizes", "must be a non-empty list of positive steps"));
            }
        }
        match self.method {
            Method::PlSmd => {
                for (k, present) in [
                    ("solver.pl_eta", self.pl_eta.is_some()),
                    ("solver.inner_len", self.inner_len.is_some()),
                    ("solver.eta_x", self.eta_x.is_some()),
                    ("solver.eta_y", self.eta_y.is_some()),
                ] {
                    if !present {
                        return Err(bad(k, "required by pl-smd"));
                    }
                }
            }
            Method::PlSvrg => {
                if self.pl_eta.is_none() {
                    return Err(bad("solver.pl_eta", "required by pl-svrg"));
                }
                if self.stages.is_none() {
                    return Err(bad("solver.stages", "required by pl-svrg"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parses a config, or the `config` table of a run summary.
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid TOML: {e}")))?;
        let body = match (table.get("config"), table.get("result")) {
            (Some(toml::Value::Table(cfg)), Some(_)) => cfg.clone(),
            _ => table,
        };
        let cfg: ExperimentConfig = toml::Value::Table(body)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err(bad("data", "give either path or synthetic, not both")),
            (None, None) => return Err(bad("data", "needs path or synthetic")),
            (None, Some(s)) => {
                if self.data.dim.is_some() {
                    return Err(bad("data.dim", "only applies to LIBSVM input"));
                }
                if s.n_pos == 0 || s.n_neg == 0 {
                    return Err(bad("data.synthetic", "both classes need examples"));
                }
                if s.dim == 0 {
                    return Err(bad("data.synthetic.dim", "must be at least 1"));
                }
                if !s.separation.is_finite() {
                    return Err(bad("data.synthetic.separation", "must be finite"));
                }
            }
            (Some(_), None) => {}
        }
        fraction("split.neg_keep_fraction", self.split.neg_keep_fraction, true)?;
        fraction("split.test_fraction", self.split.test_fraction, false)?;
        fraction("split.flip_fraction", self.split.flip_fraction, false)?;
        positive("problem.alpha", self.problem.alpha)?;
        positive("problem.radius", self.problem.radius)?;
        if let Some(t) = self.problem.theta {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(bad("problem.theta", format!("must be nonnegative and finite, got {t}")));
            }
        }
        self.solver.validate()?;
        if self.diagnostics.stride == 0 {
            return Err(bad("diagnostics.stride", "must be at least 1"));
        }
        positive("diagnostics.prox_tol", Some(self.diagnostics.prox_tol))?;
        if self.diagnostics.prox_max_iters == 0 {
            return Err(bad("diagnostics.prox_max_iters", "must be at least 1"));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.problem.alpha.unwrap_or(DEFAULT_ALPHA)
    }

    pub fn theta(&self) -> f64 {
        self.problem.theta.unwrap_or(DEFAULT_THETA)
    }

    pub fn label(&self) -> String {
        self.solver.label.clone().unwrap_or_else(|| self.solver.method.name().to_string())
    }

    /// Output directory after the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.run.output_dir.clone(),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }
}
