//! Subproblem solvers for the proximal saddle problems
//!
//! `min_x max_y f(x, y) − r(y) + g(x) + ‖x − x̄‖²/(2γ) − V(y, ȳ)/λ`
//!
//! [`smd_solve`] is the stochastic mirror descent method (λ = +∞);
//! [`svrg_solve`] is the stage-wise variance-reduced method for smooth finite sums.

use rand::{Rng, RngCore};

use crate::error::{argument, config, Result, WccError};
use crate::geometry::primal_prox_step;
use crate::linalg::all_finite;
use crate::problems::{check_point, PayoffEntry, WccProblem};
use crate::scalar::Scalar;

/// Anchors and weights of one proximal saddle subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleSubproblem<T> {
    pub x_bar: Vec<T>,
    pub y_bar: Vec<T>,
    pub gamma: T,
    /// Dual proximal weight; `+∞` removes the dual proximal term.
    pub lambda: T,
}

impl<T: Scalar> SaddleSubproblem<T> {
    pub fn new(x_bar: Vec<T>, y_bar: Vec<T>, gamma: T) -> Self {
        Self { x_bar, y_bar, gamma, lambda: T::infinity() }
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }

    /// `1/λ`, zero when λ = +∞.
    pub fn inv_lambda(&self) -> T {
        if self.lambda.is_infinite() {
            T::zero()
        } else {
            T::one() / self.lambda
        }
    }

    /// Strong convexity of the subproblem in x: `1/γ − ρ`.
    pub fn mu_x(&self, rho: T) -> T {
        T::one() / self.gamma - rho
    }

    /// Strong concavity in y: `1/λ + μ`.
    pub fn mu_y(&self, mu: T) -> T {
        self.inv_lambda() + mu
    }
}

/// Oracle-cost bookkeeping in units of component evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleCounter {
    pub stochastic_grad_calls: u64,
    pub full_evaluations: u64,
    n: usize,
}

impl OracleCounter {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "counter needs a positive component count");
        Self { stochastic_grad_calls: 0, full_evaluations: 0, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add_stochastic(&mut self, calls: u64) {
        self.stochastic_grad_calls += calls;
    }

    pub fn add_full(&mut self, evaluations: u64) {
        self.full_evaluations += evaluations;
    }

    /// `stochastic_grad_calls / n + full_evaluations`.
    pub fn data_passes(&self) -> f64 {
        self.stochastic_grad_calls as f64 / self.n as f64 + self.full_evaluations as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmdOutput<T> {
    /// Uniform average of the primal iterates `x⁽⁰⁾ … x⁽ᴶ⁻¹⁾`.
    pub x_hat: Vec<T>,
    pub y_last: Vec<T>,
    /// Uniform average of the dual iterates, used for duality-gap diagnostics.
    pub y_avg: Vec<T>,
}

/// Per-iterate observer `(j, x⁽ʲ⁾, y⁽ʲ⁾)`.
pub type Observer<'a, T> = &'a mut dyn FnMut(usize, &[T], &[T]);

fn validate_sub<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    sub: &SaddleSubproblem<T>,
) -> Result<()> {
    check_point(problem, &sub.x_bar, Some(&sub.y_bar))?;
    if !(sub.gamma > T::zero()) {
        return Err(argument(format!("γ must be positive, got {}", sub.gamma)));
    }
    if !(sub.lambda > T::zero()) {
        return Err(argument(format!("λ must be positive, got {}", sub.lambda)));
    }
    if !problem.geometry().is_interior(&sub.y_bar, T::lit(1e-9)) {
        return Err(WccError::Domain("dual anchor ȳ is not an interior simplex point".into()));
    }
    Ok(())
}

fn guard<T: Scalar>(stage: &'static str, j: usize, x: &[T], y: &[T]) -> Result<()> {
    if all_finite(x) && all_finite(y) {
        Ok(())
    } else {
        Err(WccError::Numeric {
            stage,
            iteration: j,
            detail: "non-finite iterate (step sizes or constants too aggressive?)".into(),
        })
    }
}

/// Stochastic mirror descent on the proximal saddle subproblem.
#[allow(clippy::too_many_arguments)]
pub fn smd_solve<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    sub: &SaddleSubproblem<T>,
    eta_x: T,
    eta_y: T,
    inner_len: usize,
    batch: usize,
    rng: &mut dyn RngCore,
    counter: &mut OracleCounter,
) -> Result<SmdOutput<T>> {
    smd_solve_observed(problem, sub, eta_x, eta_y, inner_len, batch, rng, counter, None)
}

#[allow(clippy::too_many_arguments)]
pub fn smd_solve_observed<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    sub: &SaddleSubproblem<T>,
    eta_x: T,
    eta_y: T,
    inner_len: usize,
    batch: usize,
    rng: &mut dyn RngCore,
    counter: &mut OracleCounter,
    mut observer: Option<Observer<'_, T>>,
) -> Result<SmdOutput<T>> {
    validate_sub(problem, sub)?;
    if !sub.lambda.is_infinite() {
        return Err(config("SMD solves the subproblem without a dual proximal term (λ = +∞)"));
    }
    if !(eta_x > T::zero() && eta_y > T::zero()) || !eta_x.is_finite() || !eta_y.is_finite() {
        return Err(argument(format!("SMD steps must be positive, got η_x={eta_x}, η_y={eta_y}")));
    }
    if inner_len < 2 {
        return Err(argument(format!("SMD needs J ≥ 2, got {inner_len}")));
    }
    let geom = problem.geometry();
    let reg = problem.dual_reg();
    let constraint = problem.constraint();

    let mut x = sub.x_bar.clone();
    let mut y = sub.y_bar.clone();
    let mut sum_x = x.clone();
    let mut sum_y = y.clone();
    if let Some(obs) = observer.as_mut() {
        obs(0, &x, &y);
    }
    for j in 0..inner_len - 1 {
        let (gx, gy) = problem.stoch_subgrad(&x, &y, batch, rng)?;
        let x_next = primal_prox_step(constraint, &x, &gx, eta_x, sub.gamma, &sub.x_bar)?;
        let y_next = geom.mirror_step(&y, &gy, eta_y, &[], &reg)?;
        guard("SMD", j, &x_next, &y_next)?;
        x = x_next;
        y = y_next;
        for (s, &v) in sum_x.iter_mut().zip(&x) {
            *s = *s + v;
        }
        for (s, &v) in sum_y.iter_mut().zip(&y) {
            *s = *s + v;
        }
        if let Some(obs) = observer.as_mut() {
            obs(j + 1, &x, &y);
        }
    }
    counter.add_stochastic(((inner_len - 1) * batch) as u64);
    let inv_j = T::one() / T::from_usize_lossy(inner_len);
    Ok(SmdOutput {
        x_hat: sum_x.into_iter().map(|v| v * inv_j).collect(),
        y_last: y,
        y_avg: sum_y.into_iter().map(|v| v * inv_j).collect(),
    })
}

/// Step sizes and stage length of the variance-reduced solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrgParams<T> {
    pub mu_x: T,
    pub mu_y: T,
    /// `Λ = 52·max{L_x², L_y²} / min{μ_x², μ_y²}`
    pub lambda_ratio: T,
    pub eta_x: T,
    pub eta_y: T,
    /// `J = ⌈1 + (3/2 + 3Λ)·ln 4⌉`
    pub inner_len: usize,
}

/// Stage lengths beyond this are rejected as a sign of unusable constants.
pub const MAX_SVRG_INNER_LEN: f64 = 1e9;

/// `Λ = 52·max{L_x², L_y²} / min{μ_x², μ_y²}`. A problem with zero gradient
/// Lipschitz constants gives Λ = 0 and infinite steps; Λ is then taken as 1.
pub fn svrg_ratio<T: Scalar>(l_x: T, l_y: T, mu_x: T, mu_y: T) -> T {
    let num = l_x.max(l_y);
    let den = mu_x.min(mu_y);
    let ratio = T::lit(52.0) * num * num / (den * den);
    if ratio == T::zero() {
        T::one()
    } else {
        ratio
    }
}

/// `J = ⌈1 + (3/2 + 3Λ) ln 4⌉` as a float (may exceed any usable length).
pub fn svrg_inner_len_f64(lambda_ratio: f64) -> f64 {
    (1.0 + (1.5 + 3.0 * lambda_ratio) * 4f64.ln()).ceil()
}

pub fn svrg_params<T: Scalar>(l_x: T, l_y: T, mu_x: T, mu_y: T) -> Result<SvrgParams<T>> {
    if !(mu_x > T::zero() && mu_y > T::zero()) {
        return Err(config(format!(
            "SVRG needs μ_x > 0 and μ_y > 0, got μ_x={mu_x}, μ_y={mu_y}"
        )));
    }
    let ratio = svrg_ratio(l_x, l_y, mu_x, mu_y);
    let j = svrg_inner_len_f64(ratio.to_f64_lossy());
    if !j.is_finite() || j > MAX_SVRG_INNER_LEN {
        return Err(config(format!(
            "SVRG stage length {j:e} from Λ = {ratio:e} is not runnable; \
             override the inner length and steps"
        )));
    }
    Ok(SvrgParams {
        mu_x,
        mu_y,
        lambda_ratio: ratio,
        eta_x: T::one() / (mu_x * ratio),
        eta_y: T::one() / (mu_y * ratio),
        inner_len: j as usize,
    })
}

/// Optional replacements for the theory-driven SVRG parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SvrgOverrides<T> {
    pub inner_len: Option<usize>,
    pub eta_x: Option<T>,
    pub eta_y: Option<T>,
}

impl<T: Scalar> SvrgOverrides<T> {
    pub fn is_complete(&self) -> bool {
        self.inner_len.is_some() && self.eta_x.is_some() && self.eta_y.is_some()
    }
}

/// Resolves SVRG parameters, falling back to the formulas for anything not
/// overridden. Missing Lipschitz constants are an error only when a formula
/// value is actually needed.
pub fn resolve_svrg_params<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    sub: &SaddleSubproblem<T>,
    overrides: &SvrgOverrides<T>,
) -> Result<SvrgParams<T>> {
    let k = problem.constants();
    let mu_x = sub.mu_x(k.rho);
    let mu_y = sub.mu_y(k.mu);
    if !(mu_x > T::zero()) {
        return Err(config(format!("subproblem is not strongly convex: 1/γ − ρ = {mu_x}")));
    }
    if !(mu_y > T::zero()) {
        return Err(config(format!("subproblem is not strongly concave: 1/λ + μ = {mu_y}")));
    }
    if overrides.is_complete() {
        let ratio = if k.l_x.is_finite() && k.l_y.is_finite() {
            svrg_ratio(k.l_x, k.l_y, mu_x, mu_y)
        } else {
            T::nan()
        };
        return Ok(SvrgParams {
            mu_x,
            mu_y,
            lambda_ratio: ratio,
            eta_x: overrides.eta_x.expect("complete"),
            eta_y: overrides.eta_y.expect("complete"),
            inner_len: overrides.inner_len.expect("complete"),
        });
    }
    k.require(&["L_x", "L_y"], "SVRG")?;
    let ratio = svrg_ratio(k.l_x, k.l_y, mu_x, mu_y);
    let formula_len = || -> Result<usize> {
        let j = svrg_inner_len_f64(ratio.to_f64_lossy());
        if !j.is_finite() || j > MAX_SVRG_INNER_LEN {
            Err(config(format!(
                "SVRG stage length {j:e} from Λ = {ratio:e} is not runnable; \
                 override the inner length"
            )))
        } else {
            Ok(j as usize)
        }
    };
    Ok(SvrgParams {
        mu_x,
        mu_y,
        lambda_ratio: ratio,
        eta_x: overrides.eta_x.unwrap_or(T::one() / (mu_x * ratio)),
        eta_y: overrides.eta_y.unwrap_or(T::one() / (mu_y * ratio)),
        inner_len: match overrides.inner_len {
            Some(j) => j,
            None => formula_len()?,
        },
    })
}

/// Full gradient and stored component payoffs at an SVRG reference point.
#[derive(Debug, Clone)]
pub struct SvrgReference<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub grad_x: Vec<T>,
    pub grad_y: Vec<T>,
    entries: Vec<Vec<PayoffEntry<T>>>,
}

impl<T: Scalar> SvrgReference<T> {
    /// Evaluates every component once (one data pass).
    pub fn new<P: WccProblem<T> + ?Sized>(problem: &P, x: &[T], y: &[T]) -> Result<Self> {
        let n = problem.num_components();
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut grad_x = vec![T::zero(); problem.primal_dim()];
        let mut grad_y = vec![T::zero(); problem.dual_dim()];
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let e = problem.payoff_component(i, x)?;
            for en in &e {
                grad_y[en.coord] = grad_y[en.coord] + en.value * inv_n;
                let w = y[en.coord] * inv_n;
                for (g, &d) in grad_x.iter_mut().zip(&en.grad) {
                    *g = *g + w * d;
                }
            }
            entries.push(e);
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), grad_x, grad_y, entries })
    }

    /// Variance-reduced estimate `G − ∇f_l(ref) + ∇f_l(x, y)` for both blocks.
    pub fn estimate<P: WccProblem<T> + ?Sized>(
        &self,
        problem: &P,
        l: usize,
        x: &[T],
        y: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let mut vx = self.grad_x.clone();
        let mut vy = self.grad_y.clone();
        for en in &self.entries[l] {
            vy[en.coord] = vy[en.coord] - en.value;
            let w = self.y[en.coord];
            for (g, &d) in vx.iter_mut().zip(&en.grad) {
                *g = *g - w * d;
            }
        }
        for en in problem.payoff_component(l, x)? {
            vy[en.coord] = vy[en.coord] + en.value;
            let w = y[en.coord];
            for (g, &d) in vx.iter_mut().zip(&en.grad) {
                *g = *g + w * d;
            }
        }
        Ok((vx, vy))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrgOutput<T> {
    pub x_hat: Vec<T>,
    pub y_hat: Vec<T>,
    pub params: SvrgParams<T>,
}

/// Variance-reduced solver for the doubly regularised subproblem; runs K − 1
/// stages and returns the last stage output.
pub fn svrg_solve<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    sub: &SaddleSubproblem<T>,
    stages: usize,
    overrides: &SvrgOverrides<T>,
    rng: &mut dyn RngCore,
    counter: &mut OracleCounter,
) -> Result<SvrgOutput<T>> {
    svrg_solve_observed(problem, sub, stages, overrides, rng, counter, None)
}

/// As [`svrg_solve`], calling `observer(k, x̂⁽ᵏ⁾, ŷ⁽ᵏ⁾)` for k = 0..K−1.
pub fn svrg_solve_observed<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    sub: &SaddleSubproblem<T>,
    stages: usize,
    overrides: &SvrgOverrides<T>,
    rng: &mut dyn RngCore,
    counter: &mut OracleCounter,
    mut observer: Option<Observer<'_, T>>,
) -> Result<SvrgOutput<T>> {
    validate_sub(problem, sub)?;
    if !problem.is_smooth() {
        return Err(config("SVRG needs a smooth finite-sum problem"));
    }
    if stages < 2 {
        return Err(argument(format!("SVRG needs K ≥ 2, got {stages}")));
    }
    let params = resolve_svrg_params(problem, sub, overrides)?;
    if params.inner_len < 1 {
        return Err(argument("SVRG stage length must be at least 1"));
    }
    if !(params.eta_x > T::zero() && params.eta_y > T::zero()) {
        return Err(argument("SVRG step sizes must be positive"));
    }
    let geom = problem.geometry();
    let reg = problem.dual_reg();
    let constraint = problem.constraint();
    let n = problem.num_components();
    let inv_lambda = sub.inv_lambda();

    let mut x_hat = sub.x_bar.clone();
    let mut y_hat = geom.center();
    if let Some(obs) = observer.as_mut() {
        obs(0, &x_hat, &y_hat);
    }
    for k in 0..stages - 1 {
        let reference = SvrgReference::new(problem, &x_hat, &y_hat)?;
        counter.add_full(1);
        let mut x = x_hat.clone();
        let mut y = y_hat.clone();
        for j in 0..params.inner_len - 1 {
            let l = rng.random_range(0..n);
            let (vx, vy) = reference.estimate(problem, l, &x, &y)?;
            let x_next = primal_prox_step(constraint, &x, &vx, params.eta_x, sub.gamma, &sub.x_bar)?;
            let y_next = if inv_lambda > T::zero() {
                geom.mirror_step(&y, &vy, params.eta_y, &[(inv_lambda, &sub.y_bar[..])], &reg)?
            } else {
                geom.mirror_step(&y, &vy, params.eta_y, &[], &reg)?
            };
            guard("SVRG", k * params.inner_len + j, &x_next, &y_next)?;
            x = x_next;
            y = y_next;
        }
        counter.add_stochastic((params.inner_len - 1) as u64);
        x_hat = x;
        y_hat = y;
        if let Some(obs) = observer.as_mut() {
            obs(k + 1, &x_hat, &y_hat);
        }
    }
    Ok(SvrgOutput { x_hat, y_hat, params })
}
