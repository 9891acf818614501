//! Proximally guided outer loops: PG-SMD and PG-SVRG, their step/length
//! schedules, the randomized output index, and the advisory iteration count.

use rand::{Rng, RngCore};

use crate::data_io::TraceRow;
use crate::error::{argument, config, Result};
use crate::geometry::apply_floor;
use crate::inner_solvers::{
    smd_solve, svrg_ratio, svrg_solve, OracleCounter, SaddleSubproblem, SvrgOverrides,
};
use crate::problems::{inner_max_closed_form, ProblemConstants, Structure, WccProblem};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleCase {
    /// Bounded domains, μ = 0 allowed.
    D1,
    /// μ > 0, linear in y, Lipschitz payoff map.
    D2,
    SvrgMuPositive,
    SvrgMuZero,
}

impl ScheduleCase {
    pub fn name(&self) -> &'static str {
        match self {
            Self::D1 => "D1",
            Self::D2 => "D2",
            Self::SvrgMuPositive => "svrg-mu-positive",
            Self::SvrgMuZero => "svrg-mu-zero",
        }
    }
}

/// Parameters used at outer iteration t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleEntry<T> {
    Smd {
        t: usize,
        eta_x: T,
        eta_y: T,
        inner_len: usize,
    },
    Svrg {
        t: usize,
        /// `+∞` when μ > 0.
        lambda: T,
        mu_y: T,
        lambda_ratio: T,
        stages: usize,
        eta_x: T,
        eta_y: T,
        inner_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgSchedule<T> {
    pub case: ScheduleCase,
    pub outer_iters: usize,
    pub gamma: T,
    pub entries: Vec<ScheduleEntry<T>>,
}

/// `(η_x, η_y, j_t)` for case D1: `j_t = (t+2)²`, `η = ratio/√j_t`, where the
/// ratios are `D_x/M_x` and `D_y/M_y`.
pub fn d1_entry<T: Scalar>(t: usize, ratio_x: T, ratio_y: T) -> (T, T, usize) {
    let j = (t + 2) * (t + 2);
    let sq = T::from_usize_lossy(j).sqrt();
    (ratio_x / sq, ratio_y / sq, j)
}

/// `(η_x, η_y, j_t)` for case D2: `j_t = t + 32`, `η_x = 60/(ρ(j_t − 30))`,
/// `η_y = 8 M_c² γ / (μ² j_t)`.
pub fn d2_entry<T: Scalar>(t: usize, rho: T, m_c: T, gamma: T, mu: T) -> (T, T, usize) {
    let j = t + 32;
    let eta_x = T::lit(60.0) / (rho * T::from_usize_lossy(j - 30));
    let eta_y = T::lit(8.0) * m_c * m_c * gamma / (mu * mu * T::from_usize_lossy(j));
    (eta_x, eta_y, j)
}

/// PG-SVRG quantities at outer iteration t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrgOuterEntry<T> {
    pub lambda: T,
    pub mu_y: T,
    pub lambda_ratio: T,
    pub stages: usize,
}

/// `λ_t`, `μ_y^t`, `Λ_t` and
/// `k_t = ⌈1 + C_k·ln[(t+1)²(4/(γμ_x)+1)(1/4+Λ_t/2)(μ_x D_x² + μ_y^t D_y²)]⌉ ≥ 2`.
#[allow(clippy::too_many_arguments)]
pub fn svrg_outer_entry<T: Scalar>(
    t: usize,
    k: &ProblemConstants<T>,
    gamma: T,
    c_k: T,
) -> SvrgOuterEntry<T> {
    let (lambda, mu_y) = if k.mu > T::zero() {
        (T::infinity(), k.mu)
    } else {
        let l = T::from_usize_lossy(t + 2);
        (l, T::one() / l)
    };
    let mu_x = T::one() / gamma - k.rho;
    let ratio = svrg_ratio(k.l_x, k.l_y, mu_x, mu_y);
    let t1 = T::from_usize_lossy(t + 1);
    let arg = t1
        * t1
        * (T::lit(4.0) / (gamma * mu_x) + T::one())
        * (T::lit(0.25) + ratio / T::lit(2.0))
        * (mu_x * k.d_x * k.d_x + mu_y * k.d_y * k.d_y);
    let raw = (T::one() + c_k * arg.ln()).ceil().to_f64_lossy();
    let stages = if raw.is_finite() { raw.max(2.0) as usize } else { 2 };
    SvrgOuterEntry { lambda, mu_y, lambda_ratio: ratio, stages }
}

/// Uniform draw from `{0, …, T−1}`.
pub fn sample_output_index(outer_iters: usize, rng: &mut dyn RngCore) -> usize {
    assert!(outer_iters >= 1, "T must be at least 1");
    rng.random_range(0..outer_iters)
}

/// Records diagnostics for the outer iterate `x̄⁽ᵗ⁾`. Implementations keep any
/// randomness on their own stream.
pub trait TraceHook<T> {
    fn record(&mut self, t: usize, x: &[T], data_passes: f64) -> Result<TraceRow>;
}

/// Hook that records only the iteration index and work done.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoDiagnostics;

impl<T> TraceHook<T> for NoDiagnostics {
    fn record(&mut self, t: usize, _x: &[T], data_passes: f64) -> Result<TraceRow> {
        Ok(TraceRow::empty(t, data_passes))
    }
}

impl<T, F> TraceHook<T> for F
where
    F: FnMut(usize, &[T], f64) -> Result<TraceRow>,
{
    fn record(&mut self, t: usize, x: &[T], data_passes: f64) -> Result<TraceRow> {
        self(t, x, data_passes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<T> {
    pub rows: Vec<TraceRow>,
    pub tau: usize,
    /// `x̄⁽τ⁾`
    pub x_out: Vec<T>,
    /// All outer iterates `x̄⁽⁰⁾ … x̄⁽ᵀ⁻¹⁾`.
    pub iterates: Vec<Vec<T>>,
    pub counter: OracleCounter,
    /// Outer schedule of the proximally guided methods; `None` for baselines.
    pub schedule: Option<PgSchedule<T>>,
    pub seed: Option<u64>,
    /// Row with the smallest recorded ψ, for reporting only.
    pub argmin_psi_t: Option<usize>,
}

pub(crate) fn argmin_psi(rows: &[TraceRow]) -> Option<usize> {
    rows.iter()
        .filter(|r| !r.psi.is_nan())
        .min_by(|a, b| a.psi.partial_cmp(&b.psi).expect("non-NaN"))
        .map(|r| r.t)
}

/// γ override or the default `1/(2ρ)`; must satisfy `0 < γ < 1/ρ`.
pub fn resolve_gamma<T: Scalar>(rho: T, gamma: Option<T>) -> Result<T> {
    let g = match gamma {
        Some(g) => g,
        None => {
            if !(rho > T::zero()) || !rho.is_finite() {
                return Err(config(format!(
                    "default γ = 1/(2ρ) needs a positive finite ρ, got {rho}; set γ explicitly"
                )));
            }
            T::one() / (T::lit(2.0) * rho)
        }
    };
    if !(g > T::zero()) || !g.is_finite() {
        return Err(config(format!("γ must be positive and finite, got {g}")));
    }
    if !(g * rho < T::one()) {
        return Err(config(format!("γ = {g} violates γ < 1/ρ with ρ = {rho}")));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmdCase {
    D1,
    D2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgSmdOptions<T> {
    pub case: SmdCase,
    pub batch: usize,
    pub gamma: Option<T>,
    /// Replaces `D_x/M_x` in the D1 schedule.
    pub ratio_x: Option<T>,
    /// Replaces `D_y/M_y` in the D1 schedule.
    pub ratio_y: Option<T>,
    /// Multipliers on the scheduled step sizes (both cases).
    pub eta_x_scale: T,
    pub eta_y_scale: T,
}

impl<T: Scalar> PgSmdOptions<T> {
    pub fn new(case: SmdCase) -> Self {
        Self {
            case,
            batch: 1,
            gamma: None,
            ratio_x: None,
            ratio_y: None,
            eta_x_scale: T::one(),
            eta_y_scale: T::one(),
        }
    }
}

/// Builds the PG-SMD schedule for `t = 0..T−2`, checking the constants each
/// case needs.
pub fn pg_smd_schedule<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    outer_iters: usize,
    opts: &PgSmdOptions<T>,
) -> Result<PgSchedule<T>> {
    let k = problem.constants();
    let gamma = resolve_gamma(k.rho, opts.gamma)?;
    if !(opts.eta_x_scale > T::zero() && opts.eta_y_scale > T::zero()) {
        return Err(config("step-size multipliers must be positive"));
    }
    let steps = outer_iters.saturating_sub(1);
    let mut entries = Vec::with_capacity(steps);
    let case = match opts.case {
        SmdCase::D1 => {
            let mut needed = Vec::new();
            if opts.ratio_x.is_none() {
                needed.extend(["D_x", "M_x"]);
            }
            if opts.ratio_y.is_none() {
                needed.extend(["D_y", "M_y"]);
            }
            k.require(&needed, "PG-SMD case D1")?;
            let rx = opts.ratio_x.unwrap_or(k.d_x / k.m_x);
            let ry = opts.ratio_y.unwrap_or(k.d_y / k.m_y);
            if !(rx > T::zero() && ry > T::zero()) {
                return Err(config("D1 step ratios must be positive"));
            }
            for t in 0..steps {
                let (ex, ey, j) = d1_entry(t, rx, ry);
                entries.push(ScheduleEntry::Smd {
                    t,
                    eta_x: ex * opts.eta_x_scale,
                    eta_y: ey * opts.eta_y_scale,
                    inner_len: j,
                });
            }
            ScheduleCase::D1
        }
        SmdCase::D2 => {
            if !(k.mu > T::zero()) {
                return Err(config("PG-SMD case D2 needs μ > 0 (θ > 0)"));
            }
            if problem.structure() != Structure::LinearInY {
                return Err(config("PG-SMD case D2 needs a problem linear in y"));
            }
            k.require(&["rho", "M_c"], "PG-SMD case D2")?;
            if !(k.rho > T::zero()) {
                return Err(config("PG-SMD case D2 needs ρ > 0"));
            }
            for t in 0..steps {
                let (ex, ey, j) = d2_entry(t, k.rho, k.m_c, gamma, k.mu);
                entries.push(ScheduleEntry::Smd {
                    t,
                    eta_x: ex * opts.eta_x_scale,
                    eta_y: ey * opts.eta_y_scale,
                    inner_len: j,
                });
            }
            ScheduleCase::D2
        }
    };
    Ok(PgSchedule { case, outer_iters, gamma, entries })
}

fn check_start<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    outer_iters: usize,
) -> Result<Vec<T>> {
    if outer_iters == 0 {
        return Err(argument("T must be at least 1"));
    }
    if x0.len() != problem.primal_dim() {
        return Err(argument(format!(
            "start point has length {}, problem expects {}",
            x0.len(),
            problem.primal_dim()
        )));
    }
    Ok(problem.constraint().project(x0))
}

/// Proximally guided stochastic mirror descent. `x0` is projected onto the
/// feasible set first.
pub fn pg_smd<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    outer_iters: usize,
    opts: &PgSmdOptions<T>,
    rng: &mut dyn RngCore,
    hook: &mut dyn TraceHook<T>,
) -> Result<RunTrace<T>> {
    let mut x = check_start(problem, x0, outer_iters)?;
    let schedule = pg_smd_schedule(problem, outer_iters, opts)?;
    let geom = problem.geometry();
    let theta = problem.dual_reg().theta();
    let mut counter = OracleCounter::new(problem.num_components());
    let mut rows = Vec::with_capacity(outer_iters);
    let mut iterates = Vec::with_capacity(outer_iters);
    rows.push(hook.record(0, &x, counter.data_passes())?);
    iterates.push(x.clone());
    for entry in &schedule.entries {
        let ScheduleEntry::Smd { t, eta_x, eta_y, inner_len } = *entry else {
            unreachable!("SMD schedule holds SMD entries");
        };
        let y_bar = match schedule.case {
            ScheduleCase::D2 => {
                let c = problem.full_dual_payoff(&x);
                counter.add_full(1);
                let (_, mut y) = inner_max_closed_form(&c, theta);
                apply_floor(&mut y, geom.floor());
                y
            }
            _ => geom.center(),
        };
        let sub = SaddleSubproblem::new(x.clone(), y_bar, schedule.gamma);
        let out = smd_solve(problem, &sub, eta_x, eta_y, inner_len, opts.batch, rng, &mut counter)?;
        x = out.x_hat;
        rows.push(hook.record(t + 1, &x, counter.data_passes())?);
        iterates.push(x.clone());
    }
    let tau = sample_output_index(outer_iters, rng);
    Ok(RunTrace {
        argmin_psi_t: argmin_psi(&rows),
        rows,
        tau,
        x_out: iterates[tau].clone(),
        iterates,
        counter,
        schedule: Some(schedule),
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgSvrgOptions<T> {
    pub gamma: Option<T>,
    /// Constant in front of the logarithm in k_t.
    pub c_k: T,
    /// Fixed number of stages per outer iteration instead of k_t.
    pub stages: Option<usize>,
    pub overrides: SvrgOverrides<T>,
}

/// Constant in k_t used by the convergence proof.
pub const DEFAULT_C_K: f64 = 4.0;

impl<T: Scalar> Default for PgSvrgOptions<T> {
    fn default() -> Self {
        Self {
            gamma: None,
            c_k: T::lit(DEFAULT_C_K),
            stages: None,
            overrides: SvrgOverrides::default(),
        }
    }
}

pub fn pg_svrg_schedule<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    outer_iters: usize,
    opts: &PgSvrgOptions<T>,
) -> Result<PgSchedule<T>> {
    if !problem.is_smooth() {
        return Err(config("PG-SVRG needs a smooth finite-sum problem"));
    }
    let k = problem.constants();
    let gamma = resolve_gamma(k.rho, opts.gamma)?;
    let mu_x = T::one() / gamma - k.rho;
    let mut needed: Vec<&'static str> = Vec::new();
    if opts.stages.is_none() {
        needed.extend(["L_x", "L_y", "D_x", "D_y"]);
    } else if !opts.overrides.is_complete() {
        needed.extend(["L_x", "L_y"]);
    }
    k.require(&needed, "PG-SVRG")?;
    let case = if k.mu > T::zero() {
        ScheduleCase::SvrgMuPositive
    } else {
        ScheduleCase::SvrgMuZero
    };
    let steps = outer_iters.saturating_sub(1);
    let mut entries = Vec::with_capacity(steps);
    for t in 0..steps {
        let e = svrg_outer_entry(t, k, gamma, opts.c_k);
        let sub = SaddleSubproblem::new(vec![T::zero(); problem.primal_dim()], vec![], gamma)
            .with_lambda(e.lambda);
        let params = crate::inner_solvers::resolve_svrg_params(problem, &sub, &opts.overrides)?;
        debug_assert!(params.mu_x == mu_x);
        entries.push(ScheduleEntry::Svrg {
            t,
            lambda: e.lambda,
            mu_y: e.mu_y,
            lambda_ratio: e.lambda_ratio,
            stages: opts.stages.unwrap_or(e.stages),
            eta_x: params.eta_x,
            eta_y: params.eta_y,
            inner_len: params.inner_len,
        });
    }
    Ok(PgSchedule { case, outer_iters, gamma, entries })
}

/// Proximally guided SVRG. The dual anchor of every subproblem is the
/// minimiser of the distance generating function.
pub fn pg_svrg<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    outer_iters: usize,
    opts: &PgSvrgOptions<T>,
    rng: &mut dyn RngCore,
    hook: &mut dyn TraceHook<T>,
) -> Result<RunTrace<T>> {
    let mut x = check_start(problem, x0, outer_iters)?;
    let schedule = pg_svrg_schedule(problem, outer_iters, opts)?;
    let center = problem.geometry().center();
    let mut counter = OracleCounter::new(problem.num_components());
    let mut rows = Vec::with_capacity(outer_iters);
    let mut iterates = Vec::with_capacity(outer_iters);
    rows.push(hook.record(0, &x, counter.data_passes())?);
    iterates.push(x.clone());
    for entry in &schedule.entries {
        let ScheduleEntry::Svrg { t, lambda, stages, eta_x, eta_y, inner_len, .. } = *entry else {
            unreachable!("SVRG schedule holds SVRG entries");
        };
        let sub = SaddleSubproblem::new(x.clone(), center.clone(), schedule.gamma).with_lambda(lambda);
        let ov = SvrgOverrides { inner_len: Some(inner_len), eta_x: Some(eta_x), eta_y: Some(eta_y) };
        let out = svrg_solve(problem, &sub, stages, &ov, rng, &mut counter)?;
        x = out.x_hat;
        rows.push(hook.record(t + 1, &x, counter.data_passes())?);
        iterates.push(x.clone());
    }
    let tau = sample_output_index(outer_iters, rng);
    Ok(RunTrace {
        argmin_psi_t: argmin_psi(&rows),
        rows,
        tau,
        x_out: iterates[tau].clone(),
        iterates,
        counter,
        schedule: Some(schedule),
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremMode {
    D1,
    D2,
    /// Chooses the μ > 0 or μ = 0 expression from the problem's μ.
    Svrg,
}

/// Outer iteration count that the convergence theorems prescribe for
/// `E‖∇ψ_γ(x̄⁽τ⁾)‖² ≤ ε²` with γ = 1/(2ρ). Returned as a (possibly huge) float.
pub fn theorem_t<T: Scalar>(
    k: &ProblemConstants<T>,
    eps: f64,
    psi0: f64,
    psi_star: f64,
    mode: TheoremMode,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(argument(format!("ε must be positive, got {eps}")));
    }
    let names: &[&'static str] = match mode {
        TheoremMode::D1 => &["rho", "D_x", "D_y", "M_x", "M_y", "Q_g", "Q_r"],
        TheoremMode::D2 => &["rho", "mu", "M_x", "M_y", "M_c", "Q_g", "Q_r"],
        TheoremMode::Svrg => {
            if k.mu > T::zero() {
                &["rho"]
            } else {
                &["rho", "D_y"]
            }
        }
    };
    k.require(names, "theorem T")?;
    let f = |v: T| v.to_f64_lossy();
    let rho = f(k.rho);
    let e2 = eps * eps;
    let gap = psi0 - psi_star;
    let x_ln_x = |b: f64| if b > 1.0 { b * b.ln() } else { 0.0 };
    let t = match mode {
        TheoremMode::D1 => {
            let a = 12.0 * rho * (gap + 8.0 * rho * f(k.d_x).powi(2) + 16.0 * f(k.q_g) + 16.0 * f(k.q_r)) / e2;
            let b = 336.0 * rho * (f(k.m_x) * f(k.d_x) + f(k.m_y) * f(k.d_y)) / e2;
            a.max(x_ln_x(b))
        }
        TheoremMode::D2 => {
            if !(k.mu > T::zero()) {
                return Err(config("theorem T for case D2 needs μ > 0"));
            }
            let gamma = 1.0 / (2.0 * rho);
            let a = 400.0 * rho * gap / e2;
            let inner = 300.0 * f(k.m_x).powi(2) / rho
                + 20.0 * f(k.m_c).powi(2) * f(k.m_y).powi(2) * gamma / f(k.mu).powi(2)
                + f(k.q_g)
                + f(k.q_r);
            let c = 720.0 * rho * inner / e2;
            a.max(x_ln_x(c))
        }
        TheoremMode::Svrg => {
            let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
            if k.mu > T::zero() {
                6.0 * rho * (gap + pi2_6) / e2
            } else {
                let a = 12.0 * rho * (gap + pi2_6) / e2;
                let b = 54.0 * rho * f(k.d_y).powi(2) / e2;
                a.max(x_ln_x(b))
            }
        }
    };
    Ok(t.ceil())
}
