//! ψ evaluation, the Moreau proximal point `prox_{γψ}(x̄)` and the envelope
//! gradient norm `‖∇ψ_γ(x̄)‖ = ‖x̄ − prox_{γψ}(x̄)‖/γ`.

use crate::error::{argument, config, Result, WccError};
use crate::linalg::{all_finite, dist2, dist2_sq, norm2_sq};
use crate::problems::{inner_max_closed_form, Structure, WccProblem};
use crate::scalar::Scalar;

pub const DEFAULT_PROX_TOL: f64 = 1e-8;
pub const DEFAULT_PROX_MAX_ITERS: usize = 100_000;

/// Slack allowed when deciding whether a point lies in the primal set.
const FEASIBILITY_TOL: f64 = 1e-9;

fn require_closed_form<T: Scalar, P: WccProblem<T> + ?Sized>(problem: &P) -> Result<()> {
    if problem.structure() != Structure::LinearInY {
        return Err(config("ψ needs an exactly solvable inner maximisation"));
    }
    Ok(())
}

/// `ψ(x) = max_y [f(x, y) − r(y)] + g(x)`; `+∞` when x is infeasible.
pub fn psi_value<T: Scalar, P: WccProblem<T> + ?Sized>(problem: &P, x: &[T]) -> Result<T> {
    require_closed_form(problem)?;
    if x.len() != problem.primal_dim() {
        return Err(argument(format!(
            "point has length {}, problem expects {}",
            x.len(),
            problem.primal_dim()
        )));
    }
    if !problem.constraint().contains(x, T::lit(FEASIBILITY_TOL)) {
        return Ok(T::infinity());
    }
    let c = problem.full_dual_payoff(x);
    Ok(inner_max_closed_form(&c, problem.dual_reg().theta()).0)
}

/// ψ(z) and a (sub)gradient `Σₖ y*ₖ ∇cₖ(z)` from one pass over the components.
pub fn psi_and_grad<T: Scalar, P: WccProblem<T> + ?Sized>(problem: &P, z: &[T]) -> Result<(T, Vec<T>)> {
    let n = problem.num_components();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut c = vec![T::zero(); problem.dual_dim()];
    let mut all = Vec::with_capacity(n);
    for i in 0..n {
        let entries = problem.payoff_component(i, z)?;
        for e in &entries {
            c[e.coord] = c[e.coord] + e.value * inv_n;
        }
        all.push(entries);
    }
    let (value, y) = inner_max_closed_form(&c, problem.dual_reg().theta());
    let mut g = vec![T::zero(); problem.primal_dim()];
    for e in all.iter().flatten() {
        let w = y[e.coord] * inv_n;
        if w != T::zero() {
            for (gj, &dj) in g.iter_mut().zip(&e.grad) {
                *gj = *gj + w * dj;
            }
        }
    }
    Ok((value, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOptions<T> {
    /// Projected-gradient residual (smooth ψ) or objective-gap bound (non-smooth ψ).
    pub tol: T,
    pub max_iters: usize,
    /// Starting point, projected first; defaults to `x̄`.
    pub start: Option<Vec<T>>,
}

impl<T: Scalar> Default for ProxOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(DEFAULT_PROX_TOL), max_iters: DEFAULT_PROX_MAX_ITERS, start: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxMethod {
    ProjectedGradient,
    /// Used when ψ has no smoothness bound (θ = 0).
    Subgradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxSolution<T> {
    pub z: Vec<T>,
    /// `F(z) = ψ(z) + ‖z − x̄‖²/(2γ)`, the envelope value ψ_γ(x̄).
    pub objective: T,
    pub psi_at_z: T,
    pub iterations: usize,
    /// Final residual or gap, in the method's own units.
    pub residual: T,
    pub method: ProxMethod,
    /// Whether F never increased along the iterates (projected gradient only).
    pub monotone: bool,
}

/// `prox_{γψ}(x̄) = argmin_z ψ(z) + ‖z − x̄‖²/(2γ)` over the primal set.
///
/// Smooth ψ: projected gradient descent with step `1/(L_ψ + 1/γ)` until the
/// projected-gradient residual is at most `tol`. Otherwise: subgradient steps
/// `2/(μ(k+1))` with weighted averaging, stopped once the gap between the
/// averaged objective and an aggregated lower model is at most `tol`.
pub fn moreau_prox<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x_bar: &[T],
    gamma: T,
    opts: &ProxOptions<T>,
) -> Result<ProxSolution<T>> {
    require_closed_form(problem)?;
    if x_bar.len() != problem.primal_dim() {
        return Err(argument(format!(
            "point has length {}, problem expects {}",
            x_bar.len(),
            problem.primal_dim()
        )));
    }
    let rho = problem.constants().rho;
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(argument(format!("γ must be positive and finite, got {gamma}")));
    }
    let mu = T::one() / gamma - rho;
    if !(mu > T::zero()) {
        return Err(config(format!("γ = {gamma} violates γ < 1/ρ with ρ = {rho}")));
    }
    if !(opts.tol > T::zero()) {
        return Err(argument("prox tolerance must be positive"));
    }
    let constraint = problem.constraint();
    let z0 = constraint.project(opts.start.as_deref().unwrap_or(x_bar));
    match problem.psi_smoothness() {
        Some(l_psi) if l_psi.is_finite() => {
            prox_gradient(problem, x_bar, gamma, l_psi, z0, opts)
        }
        _ => prox_subgradient(problem, x_bar, gamma, mu, z0, opts),
    }
}

fn objective_grad<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x_bar: &[T],
    gamma: T,
    z: &[T],
) -> Result<(T, T, Vec<T>)> {
    let (psi, mut g) = psi_and_grad(problem, z)?;
    for ((gj, &zj), &xj) in g.iter_mut().zip(z).zip(x_bar) {
        *gj = *gj + (zj - xj) / gamma;
    }
    let f = psi + dist2_sq(z, x_bar) / (T::lit(2.0) * gamma);
    Ok((f, psi, g))
}

fn numeric(iteration: usize) -> WccError {
    WccError::Numeric {
        stage: "moreau prox",
        iteration,
        detail: "non-finite iterate".into(),
    }
}

fn prox_gradient<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x_bar: &[T],
    gamma: T,
    l_psi: T,
    mut z: Vec<T>,
    opts: &ProxOptions<T>,
) -> Result<ProxSolution<T>> {
    let constraint = problem.constraint();
    let step = T::one() / (l_psi + T::one() / gamma);
    let (mut f, mut psi, mut g) = objective_grad(problem, x_bar, gamma, &z)?;
    let mut monotone = true;
    let mut residual = T::infinity();
    for k in 0..=opts.max_iters {
        let trial: Vec<T> = z.iter().zip(&g).map(|(&zj, &gj)| zj - step * gj).collect();
        let z_next = constraint.project(&trial);
        residual = dist2(&z_next, &z) / step;
        if !residual.is_finite() {
            return Err(numeric(k));
        }
        if residual <= opts.tol {
            return Ok(ProxSolution {
                z,
                objective: f,
                psi_at_z: psi,
                iterations: k,
                residual,
                method: ProxMethod::ProjectedGradient,
                monotone,
            });
        }
        if k == opts.max_iters {
            break;
        }
        let (f_next, psi_next, g_next) = objective_grad(problem, x_bar, gamma, &z_next)?;
        // rounding slack relative to |F|
        if f_next > f + T::lit(1e-13) * (T::one() + f.abs()) {
            monotone = false;
        }
        z = z_next;
        f = f_next;
        psi = psi_next;
        g = g_next;
    }
    Err(WccError::NonConvergence {
        what: "moreau prox (projected gradient)",
        iterations: opts.max_iters,
        residual: residual.to_f64_lossy(),
    })
}

fn prox_subgradient<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x_bar: &[T],
    gamma: T,
    mu: T,
    mut z: Vec<T>,
    opts: &ProxOptions<T>,
) -> Result<ProxSolution<T>> {
    let constraint = problem.constraint();
    let p = z.len();
    let two_gamma = T::lit(2.0) * gamma;
    let mut avg = vec![T::zero(); p];
    let mut w_sum = T::zero();
    // aggregated lower model  Σ w_k [F_k + ⟨g_k, · − z_k⟩ + μ/2‖· − z_k‖²]
    //   = W·(μ/2‖· − C‖² + const), tracked through these sums
    let mut c_sum = vec![T::zero(); p];
    let mut c_sq_sum = T::zero();
    let mut e_sum = T::zero();
    let mut gap = T::infinity();
    let check_every = 8;
    for k in 1..=opts.max_iters {
        let (f, _, g) = objective_grad(problem, x_bar, gamma, &z)?;
        if !f.is_finite() || !all_finite(&g) {
            return Err(numeric(k));
        }
        let w = T::from_usize_lossy(k);
        w_sum = w_sum + w;
        let frac = w / w_sum;
        for (a, &zj) in avg.iter_mut().zip(&z) {
            *a = *a + frac * (zj - *a);
        }
        let c: Vec<T> = z.iter().zip(&g).map(|(&zj, &gj)| zj - gj / mu).collect();
        for (s, &cj) in c_sum.iter_mut().zip(&c) {
            *s = *s + w * cj;
        }
        c_sq_sum = c_sq_sum + w * norm2_sq(&c);
        e_sum = e_sum + w * (f - norm2_sq(&g) / (T::lit(2.0) * mu));

        if k % check_every == 0 || k == opts.max_iters {
            let big_c: Vec<T> = c_sum.iter().map(|&s| s / w_sum).collect();
            let zc = constraint.project(&big_c);
            let lower = T::lit(0.5) * mu * (dist2_sq(&zc, &big_c) + c_sq_sum / w_sum - norm2_sq(&big_c))
                + e_sum / w_sum;
            let (psi_avg, _) = psi_and_grad(problem, &avg)?;
            let f_avg = psi_avg + dist2_sq(&avg, x_bar) / two_gamma;
            gap = (f_avg - lower).max(T::zero());
            if gap <= opts.tol {
                return Ok(ProxSolution {
                    z: avg,
                    objective: f_avg,
                    psi_at_z: psi_avg,
                    iterations: k,
                    residual: gap,
                    method: ProxMethod::Subgradient,
                    monotone: false,
                });
            }
        }
        let step = T::lit(2.0) / (mu * T::from_usize_lossy(k + 1));
        let trial: Vec<T> = z.iter().zip(&g).map(|(&zj, &gj)| zj - step * gj).collect();
        z = constraint.project(&trial);
    }
    Err(WccError::NonConvergence {
        what: "moreau prox (subgradient)",
        iterations: opts.max_iters,
        residual: gap.to_f64_lossy(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport<T> {
    pub gamma: T,
    pub prox_point: Vec<T>,
    /// `‖x̄ − z‖/γ`
    pub grad_norm: T,
    pub psi_at_xbar: T,
    pub psi_at_z: T,
    /// `ψ(z) + ‖z − x̄‖²/(2γ)`
    pub envelope: T,
    pub iterations: usize,
    pub residual: T,
    pub method: ProxMethod,
}

pub fn stationarity_report<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x_bar: &[T],
    gamma: T,
    opts: &ProxOptions<T>,
) -> Result<StationarityReport<T>> {
    let sol = moreau_prox(problem, x_bar, gamma, opts)?;
    Ok(StationarityReport {
        gamma,
        grad_norm: dist2(x_bar, &sol.z) / gamma,
        psi_at_xbar: psi_value(problem, x_bar)?,
        psi_at_z: sol.psi_at_z,
        envelope: sol.objective,
        iterations: sol.iterations,
        residual: sol.residual,
        method: sol.method,
        prox_point: sol.z,
    })
}

/// `‖∇ψ_γ(x̄)‖ = ‖x̄ − prox_{γψ}(x̄)‖/γ`.
pub fn moreau_grad_norm<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x_bar: &[T],
    gamma: T,
    tol: T,
) -> Result<T> {
    let opts = ProxOptions { tol, ..ProxOptions::default() };
    let sol = moreau_prox(problem, x_bar, gamma, &opts)?;
    Ok(dist2(x_bar, &sol.z) / gamma)
}

/// `ψ_γ(x̄)` itself.
pub fn moreau_envelope<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x_bar: &[T],
    gamma: T,
    opts: &ProxOptions<T>,
) -> Result<T> {
    Ok(moreau_prox(problem, x_bar, gamma, opts)?.objective)
}
