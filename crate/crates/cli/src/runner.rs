//! Builds data and problem from a config, runs the solver, and writes the
//! trace, summary and final iterate.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use wcc_core::data_io::{
    flip_labels, format_float, imbalance_split, metrics, parse_float, parse_libsvm,
    synthetic_gaussian, write_trace, SyntheticSpec,
};
use wcc_core::outer_solvers::{resolve_gamma, ScheduleEntry};
use wcc_core::{
    erm_sgd, pg_smd, pg_svrg, pl_run, psi_value, stationarity_report, Dataset, DroProblem,
    ErmOptions, PgSmdOptions, PgSvrgOptions, PlConfig, PlInner, PrimalConstraint, ProxOptions,
    SmdCase, StepSchedule, SvrgOverrides, Trace, TraceHook, TraceRow, WccProblem,
};

use crate::config::{ExperimentConfig, Method};
use crate::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const ITERATE_FILE: &str = "x_out.txt";
pub const COMPARE_FILE: &str = "compare.csv";

/// Training/test data and the DRO instance built on the training set.
pub struct Prepared {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub problem: DroProblem,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(p), _) => Ok(parse_libsvm(p, cfg.data.dim)?),
        (None, Some(s)) => {
            let spec = SyntheticSpec { n_pos: s.n_pos, n_neg: s.n_neg, dim: s.dim, separation: s.separation };
            Ok(synthetic_gaussian(&spec, &mut ChaCha8Rng::seed_from_u64(s.seed))?)
        }
        (None, None) => Err(CliError::Config("data: needs path or synthetic".into())),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    let full = load_dataset(cfg)?;
    let split = &cfg.split;
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    let (mut train, test) = if split.test_fraction > 0.0 {
        let (tr, te) = imbalance_split(&full, split.neg_keep_fraction, split.test_fraction, &mut rng)?;
        (tr, Some(te))
    } else if split.neg_keep_fraction < 1.0 {
        return Err(CliError::Config(
            "split.test_fraction: must be positive when negatives are thinned".into(),
        ));
    } else {
        (full, None)
    };
    if split.flip_fraction > 0.0 {
        train = flip_labels(&train, split.flip_fraction, &mut rng)?;
    }
    let constraint = match cfg.problem.radius {
        Some(r) => PrimalConstraint::ball(r),
        None => PrimalConstraint::Free,
    };
    let problem = DroProblem::new(
        train.features.clone(),
        train.labels.clone(),
        cfg.alpha(),
        cfg.theta(),
        constraint,
    )?;
    Ok(Prepared { train, test, problem })
}

/// Evaluates ψ and test metrics on every row and the envelope gradient on
/// every `stride`-th row and the last one. Deterministic: it never draws
/// from the algorithm's random stream.
struct Diagnostics<'a> {
    problem: &'a DroProblem,
    test: Option<&'a Dataset>,
    gamma: f64,
    stride: usize,
    moreau: bool,
    prox: ProxOptions<f64>,
    last_t: usize,
    rows_seen: usize,
    start: Option<Instant>,
}

impl TraceHook<f64> for Diagnostics<'_> {
    fn record(&mut self, t: usize, x: &[f64], data_passes: f64) -> wcc_core::Result<TraceRow> {
        let mut row = TraceRow::empty(t, data_passes);
        row.psi = psi_value(self.problem, x)?;
        let on_stride = self.rows_seen % self.stride == 0 || t == self.last_t;
        self.rows_seen += 1;
        if self.moreau && on_stride {
            let r = stationarity_report(self.problem, x, self.gamma, &self.prox)?;
            row.moreau_grad_sq = r.grad_norm * r.grad_norm;
        }
        if let Some(test) = self.test {
            let (err, f) = metrics(&test.scores(x), &test.labels);
            row.test_error = err;
            row.f_score = f;
        }
        if let Some(s) = self.start {
            row.wall_ms = s.elapsed().as_secs_f64() * 1e3;
        }
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSection {
    pub method: String,
    pub label: String,
    pub iterations: usize,
    pub tau: usize,
    pub gamma: f64,
    pub rho: f64,
    pub n_train: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    pub dim: usize,
    pub data_passes: f64,
    pub stochastic_grad_calls: u64,
    pub full_evaluations: u64,
    pub final_psi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_moreau_grad_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_test_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_f_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_test_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_f_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmin_psi_t: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub t: usize,
    pub eta_x: f64,
    pub eta_y: f64,
    pub inner_len: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub result: ResultSection,
    /// Problem constants; `inf` marks an unavailable bound.
    pub constants: BTreeMap<String, f64>,
    #[serde(default)]
    pub schedule: Vec<ScheduleRow>,
    /// Fully resolved configuration; `wcc run` accepts this file directly.
    pub config: ExperimentConfig,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trace: Trace,
    pub summary: Summary,
    pub output_dir: PathBuf,
}

fn schedule_rows(trace: &Trace) -> Vec<ScheduleRow> {
    let Some(s) = &trace.schedule else { return Vec::new() };
    s.entries
        .iter()
        .map(|e| match *e {
            ScheduleEntry::Smd { t, eta_x, eta_y, inner_len } => ScheduleRow {
                t,
                eta_x,
                eta_y,
                inner_len,
                stages: None,
                lambda: None,
                mu_y: None,
                lambda_ratio: None,
            },
            ScheduleEntry::Svrg { t, lambda, mu_y, lambda_ratio, stages, eta_x, eta_y, inner_len } => {
                ScheduleRow {
                    t,
                    eta_x,
                    eta_y,
                    inner_len,
                    stages: Some(stages),
                    lambda: Some(lambda),
                    mu_y: Some(mu_y),
                    lambda_ratio: Some(lambda_ratio),
                }
            }
        })
        .collect()
}

fn svrg_overrides(cfg: &ExperimentConfig) -> SvrgOverrides<f64> {
    SvrgOverrides { inner_len: cfg.solver.inner_len, eta_x: cfg.solver.eta_x, eta_y: cfg.solver.eta_y }
}

/// Fills every default the run depends on so the embedded config is explicit.
fn resolve(cfg: &ExperimentConfig, gamma: f64, output_dir: &Path) -> ExperimentConfig {
    let mut r = cfg.clone();
    r.problem.alpha = Some(cfg.alpha());
    r.problem.theta = Some(cfg.theta());
    r.run.output_dir = output_dir.to_path_buf();
    if let Some(p) = &cfg.data.path {
        r.data.path = Some(fs::canonicalize(p).unwrap_or_else(|_| p.clone()));
    }
    let s = &mut r.solver;
    match cfg.solver.method {
        Method::PgSmdD1 | Method::PgSmdD2 => {
            s.gamma = Some(gamma);
            s.batch.get_or_insert(1);
            s.eta_x_scale.get_or_insert(1.0);
            s.eta_y_scale.get_or_insert(1.0);
        }
        Method::PgSvrg => {
            s.gamma = Some(gamma);
            s.c_k.get_or_insert(wcc_core::outer_solvers::DEFAULT_C_K);
        }
        Method::PlSmd => {
            s.batch.get_or_insert(1);
            s.exact_dual_anchor.get_or_insert(false);
        }
        Method::PlSvrg => {}
        Method::ErmSgd => {
            s.batch.get_or_insert(1);
            s.step_sizes.get_or_insert_with(|| vec![DEFAULT_ERM_STEP]);
            s.step_starts.get_or_insert_with(|| vec![0]);
        }
    }
    r
}

pub const DEFAULT_ERM_STEP: f64 = 0.1;

fn x0_for(cfg: &ExperimentConfig, dim: usize) -> Result<Vec<f64>, CliError> {
    match &cfg.solver.x0 {
        Some(x) if x.len() != dim => Err(CliError::Config(format!(
            "solver.x0: has length {}, data dimension is {dim}",
            x.len()
        ))),
        Some(x) => Ok(x.clone()),
        None => Ok(vec![0.0; dim]),
    }
}

/// Runs the configured solver; returns the trace and the γ used for diagnostics.
pub fn execute(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(Trace, f64), CliError> {
    let problem = &prep.problem;
    let k = problem.constants();
    let s = &cfg.solver;
    let x0 = x0_for(cfg, problem.primal_dim())?;
    let gamma = resolve_gamma(k.rho, s.gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let last_t = match s.method {
        Method::ErmSgd => s.iterations,
        _ => s.iterations - 1,
    };
    let mut hook = Diagnostics {
        problem,
        test: prep.test.as_ref(),
        gamma,
        stride: cfg.diagnostics.stride,
        moreau: cfg.diagnostics.moreau,
        prox: ProxOptions {
            tol: cfg.diagnostics.prox_tol,
            max_iters: cfg.diagnostics.prox_max_iters,
            start: None,
        },
        last_t,
        rows_seen: 0,
        start: cfg.run.wall_time.then(Instant::now),
    };
    let trace = match s.method {
        Method::PgSmdD1 | Method::PgSmdD2 => {
            let case = if s.method == Method::PgSmdD1 { SmdCase::D1 } else { SmdCase::D2 };
            let mut opts = PgSmdOptions::new(case);
            opts.batch = s.batch.unwrap_or(1);
            opts.gamma = Some(gamma);
            opts.ratio_x = s.ratio_x;
            opts.ratio_y = s.ratio_y;
            opts.eta_x_scale = s.eta_x_scale.unwrap_or(1.0);
            opts.eta_y_scale = s.eta_y_scale.unwrap_or(1.0);
            pg_smd(problem, &x0, s.iterations, &opts, &mut rng, &mut hook)?
        }
        Method::PgSvrg => {
            let opts = PgSvrgOptions {
                gamma: Some(gamma),
                c_k: s.c_k.unwrap_or(wcc_core::outer_solvers::DEFAULT_C_K),
                stages: s.stages,
                overrides: svrg_overrides(cfg),
            };
            pg_svrg(problem, &x0, s.iterations, &opts, &mut rng, &mut hook)?
        }
        Method::PlSmd | Method::PlSvrg => {
            let inner = if s.method == Method::PlSmd {
                PlInner::Smd {
                    eta_x: s.eta_x.expect("validated"),
                    eta_y: s.eta_y.expect("validated"),
                    inner_len: s.inner_len.expect("validated"),
                    batch: s.batch.unwrap_or(1),
                }
            } else {
                PlInner::Svrg { stages: s.stages.expect("validated"), overrides: svrg_overrides(cfg) }
            };
            let pl = PlConfig {
                eta: s.pl_eta.expect("validated"),
                inner,
                outer_iters: s.iterations,
                exact_dual_anchor: s.exact_dual_anchor.unwrap_or(false),
            };
            pl_run(problem, &x0, &pl, &mut rng, &mut hook)?
        }
        Method::ErmSgd => {
            let schedule = StepSchedule::new(
                s.step_starts.clone().unwrap_or_else(|| vec![0]),
                s.step_sizes.clone().unwrap_or_else(|| vec![DEFAULT_ERM_STEP]),
            )
            .map_err(|e| CliError::Config(format!("solver.step_sizes/step_starts: {e}")))?;
            let batch = s.batch.unwrap_or(1);
            let opts = ErmOptions {
                steps: s.iterations,
                schedule,
                batch,
                record_every: s.record_every.unwrap_or(problem.num_components().div_ceil(batch)),
            };
            erm_sgd(problem, &x0, &opts, &mut rng, &mut hook)?
        }
    };
    Ok((trace, gamma))
}

fn fold_opt(rows: &[TraceRow], pick: impl Fn(&TraceRow) -> f64, better: fn(f64, f64) -> f64) -> Option<f64> {
    rows.iter().map(pick).filter(|v| !v.is_nan()).reduce(better)
}

pub fn summarize(cfg: &ExperimentConfig, prep: &Prepared, trace: &Trace, gamma: f64, output_dir: &Path) -> Result<Summary, CliError> {
    let problem = &prep.problem;
    let final_psi = psi_value(problem, &trace.x_out)?;
    let final_moreau = if cfg.diagnostics.moreau {
        let prox = ProxOptions {
            tol: cfg.diagnostics.prox_tol,
            max_iters: cfg.diagnostics.prox_max_iters,
            start: None,
        };
        let r = stationarity_report(problem, &trace.x_out, gamma, &prox)?;
        Some(r.grad_norm * r.grad_norm)
    } else {
        None
    };
    let (final_err, final_f) = match &prep.test {
        Some(test) => {
            let (e, f) = metrics(&test.scores(&trace.x_out), &test.labels);
            (Some(e), Some(f))
        }
        None => (None, None),
    };
    let result = ResultSection {
        method: cfg.solver.method.name().to_string(),
        label: cfg.label(),
        iterations: cfg.solver.iterations,
        tau: trace.tau,
        gamma,
        rho: problem.constants().rho,
        n_train: prep.train.len(),
        n_test: prep.test.as_ref().map(|t| t.len()),
        dim: prep.train.dim(),
        data_passes: trace.counter.data_passes(),
        stochastic_grad_calls: trace.counter.stochastic_grad_calls,
        full_evaluations: trace.counter.full_evaluations,
        final_psi,
        final_moreau_grad_sq: final_moreau,
        final_test_error: final_err,
        final_f_score: final_f,
        best_test_error: fold_opt(&trace.rows, |r| r.test_error, f64::min),
        best_f_score: fold_opt(&trace.rows, |r| r.f_score, f64::max),
        argmin_psi_t: trace.argmin_psi_t,
    };
    let constants = problem
        .constants()
        .entries()
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    Ok(Summary {
        result,
        constants,
        schedule: schedule_rows(trace),
        config: resolve(cfg, gamma, output_dir),
    })
}

pub fn write_iterate(x: &[f64], path: &Path) -> Result<(), CliError> {
    let mut text = String::new();
    for v in x {
        text.push_str(&format_float(*v));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_iterate(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v = parse_float(l)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Config(format!("{}: non-finite coordinate {l:?}", path.display())))
            }
        })
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Runs one experiment and writes `trace.csv`, `summary.toml` and `x_out.txt`
/// into `dir` (the configured output directory unless given).
pub fn run_experiment_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, CliError> {
    let prep = prepare(cfg)?;
    let (trace, gamma) = execute(cfg, &prep)?;
    let summary = summarize(cfg, &prep, &trace, gamma, dir)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let trace_path = dir.join(TRACE_FILE);
    let file = fs::File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    write_trace(&trace.rows, std::io::BufWriter::new(file))?;
    let summary_path = dir.join(SUMMARY_FILE);
    let text = toml::to_string(&summary).map_err(|e| CliError::Io(format!("summary: {e}")))?;
    fs::write(&summary_path, text).map_err(|e| io_err(&summary_path, e))?;
    write_iterate(&trace.x_out, &dir.join(ITERATE_FILE))?;
    Ok(RunOutcome { trace, summary, output_dir: dir.to_path_buf() })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    run_experiment_in(cfg, &cfg.output_dir())
}

/// Runs several configs over the same data and split and writes one long
/// CSV `solver,data_passes,psi,test_error,f_score`. Each member's own outputs
/// go to `<dir>/<label>/`.
pub fn compare_solvers(cfgs: &[ExperimentConfig], dir: &Path) -> Result<Vec<RunOutcome>, CliError> {
    let first = cfgs.first().ok_or_else(|| CliError::Config("compare needs at least one config".into()))?;
    for c in &cfgs[1..] {
        if c.data != first.data || c.split != first.split {
            return Err(CliError::Config(format!(
                "data/split: config for {} does not share the dataset and split of {}",
                c.label(),
                first.label()
            )));
        }
    }
    let mut labels: Vec<String> = Vec::new();
    for c in cfgs {
        let base = c.label();
        let mut label = base.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{base}-{k}");
            k += 1;
        }
        labels.push(label);
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut outcomes = Vec::with_capacity(cfgs.len());
    for (c, label) in cfgs.iter().zip(&labels) {
        outcomes.push(run_experiment_in(c, &dir.join(label))?);
    }
    let path = dir.join(COMPARE_FILE);
    let mut out = std::io::BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "solver,data_passes,psi,test_error,f_score")?;
        for (o, label) in outcomes.iter().zip(&labels) {
            for r in &o.trace.rows {
                writeln!(
                    out,
                    "{label},{},{},{},{}",
                    format_float(r.data_passes),
                    format_float(r.psi),
                    format_float(r.test_error),
                    format_float(r.f_score)
                )?;
            }
        }
        out.flush()
    };
    write().map_err(|e| io_err(&path, e))?;
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaritySummary {
    pub gamma: f64,
    pub psi_at_x: f64,
    pub psi_at_prox: f64,
    pub envelope: f64,
    pub moreau_grad_norm: f64,
    pub moreau_grad_sq: f64,
    pub prox_iterations: usize,
    pub prox_residual: f64,
    pub prox_point: Vec<f64>,
}

/// Stationarity report for a stored iterate on the config's problem.
pub fn stationarity_at(cfg: &ExperimentConfig, iterate: &Path) -> Result<StationaritySummary, CliError> {
    let prep = prepare(cfg)?;
    let x = read_iterate(iterate)?;
    if x.len() != prep.problem.primal_dim() {
        return Err(CliError::Config(format!(
            "{}: iterate has length {}, problem dimension is {}",
            iterate.display(),
            x.len(),
            prep.problem.primal_dim()
        )));
    }
    let gamma = resolve_gamma(prep.problem.constants().rho, cfg.solver.gamma)?;
    let prox = ProxOptions {
        tol: cfg.diagnostics.prox_tol,
        max_iters: cfg.diagnostics.prox_max_iters,
        start: None,
    };
    let r = stationarity_report(&prep.problem, &x, gamma, &prox)?;
    Ok(StationaritySummary {
        gamma,
        psi_at_x: r.psi_at_xbar,
        psi_at_prox: r.psi_at_z,
        envelope: r.envelope,
        moreau_grad_norm: r.grad_norm,
        moreau_grad_sq: r.grad_norm * r.grad_norm,
        prox_iterations: r.iterations,
        prox_residual: r.residual,
        prox_point: r.prox_point,
    })
}
