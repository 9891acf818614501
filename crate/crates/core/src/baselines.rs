//! Comparison methods: the prox-linear (PL) scheme with an SMD or SVRG inner
//! solver, and plain empirical risk minimisation by projected SGD.

use std::sync::OnceLock;

use rand::RngCore;

use crate::error::{argument, config, Result};
use crate::geometry::{apply_floor, BregmanGeometry, DualRegularizer, PrimalConstraint};
use crate::inner_solvers::{smd_solve, svrg_solve, OracleCounter, SaddleSubproblem, SvrgOverrides};
use crate::linalg::{all_finite, dot};
use crate::outer_solvers::{argmin_psi, RunTrace, TraceHook};
use crate::problems::{inner_max_closed_form, PayoffEntry, ProblemConstants, Structure, WccProblem};
use crate::scalar::Scalar;

/// The problem with every component payoff replaced by its first-order
/// expansion `cᵢ(x_t) + ∇cᵢ(x_t)(x − x_t)`. Frozen values and Jacobian rows
/// are computed the first time a component is touched.
pub struct LinearizedProblem<'a, T: Scalar, P: WccProblem<T> + ?Sized> {
    base: &'a P,
    x_t: Vec<T>,
    frozen: Vec<OnceLock<Vec<PayoffEntry<T>>>>,
    constants: ProblemConstants<T>,
}

impl<'a, T: Scalar, P: WccProblem<T> + ?Sized> LinearizedProblem<'a, T, P> {
    pub fn new(base: &'a P, x_t: &[T]) -> Result<Self> {
        if base.structure() != Structure::LinearInY {
            return Err(config("prox-linear needs a problem linear in y"));
        }
        if x_t.len() != base.primal_dim() {
            return Err(argument(format!(
                "point has length {}, problem expects {}",
                x_t.len(),
                base.primal_dim()
            )));
        }
        let mut constants = base.constants().clone();
        // the model is affine in x
        constants.rho = T::zero();
        Ok(Self {
            base,
            x_t: x_t.to_vec(),
            frozen: (0..base.num_components()).map(|_| OnceLock::new()).collect(),
            constants,
        })
    }

    pub fn anchor(&self) -> &[T] {
        &self.x_t
    }

    /// Number of components whose frozen values have been computed.
    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|c| c.get().is_some()).count()
    }

    fn frozen(&self, i: usize) -> Result<&[PayoffEntry<T>]> {
        let n = self.frozen.len();
        if i >= n {
            return Err(argument(format!("component {i} out of range 0..{n}")));
        }
        let cell = &self.frozen[i];
        if cell.get().is_none() {
            let entries = self.base.payoff_component(i, &self.x_t)?;
            // a concurrent caller may have won; both values are identical
            let _ = cell.set(entries);
        }
        Ok(cell.get().expect("set above"))
    }
}

impl<T: Scalar, P: WccProblem<T> + ?Sized> WccProblem<T> for LinearizedProblem<'_, T, P> {
    fn primal_dim(&self) -> usize {
        self.base.primal_dim()
    }

    fn dual_dim(&self) -> usize {
        self.base.dual_dim()
    }

    fn num_components(&self) -> usize {
        self.base.num_components()
    }

    fn constraint(&self) -> &PrimalConstraint<T> {
        self.base.constraint()
    }

    fn dual_reg(&self) -> DualRegularizer<T> {
        self.base.dual_reg()
    }

    fn geometry(&self) -> &BregmanGeometry<T> {
        self.base.geometry()
    }

    fn constants(&self) -> &ProblemConstants<T> {
        &self.constants
    }

    fn is_smooth(&self) -> bool {
        true
    }

    fn payoff_component(&self, i: usize, x: &[T]) -> Result<Vec<PayoffEntry<T>>> {
        let dx: Vec<T> = x.iter().zip(&self.x_t).map(|(&a, &b)| a - b).collect();
        Ok(self
            .frozen(i)?
            .iter()
            .map(|e| PayoffEntry {
                coord: e.coord,
                value: e.value + dot(&e.grad, &dx),
                grad: e.grad.clone(),
            })
            .collect())
    }

    fn psi_smoothness(&self) -> Option<T> {
        self.base.psi_smoothness()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlInner<T> {
    Smd {
        eta_x: T,
        eta_y: T,
        inner_len: usize,
        batch: usize,
    },
    Svrg {
        stages: usize,
        overrides: SvrgOverrides<T>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlConfig<T> {
    /// Prox-linear step length η > 0.
    pub eta: T,
    pub inner: PlInner<T>,
    pub outer_iters: usize,
    /// Anchor the SMD dual at the exact maximiser for c(x_t) (one extra pass)
    /// instead of the uniform distribution.
    pub exact_dual_anchor: bool,
}

impl<T: Scalar> PlConfig<T> {
    fn validate(&self) -> Result<()> {
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return Err(config(format!("prox-linear η must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

/// One prox-linear step: approximately solves
/// `min_x max_y yᵀ(c(x_t) + ∇c(x_t)(x − x_t)) − r(y) + g(x) + ‖x − x_t‖²/(2η)`.
pub fn pl_step<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x_t: &[T],
    cfg: &PlConfig<T>,
    rng: &mut dyn RngCore,
    counter: &mut OracleCounter,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let lin = LinearizedProblem::new(problem, x_t)?;
    let geom = problem.geometry();
    match cfg.inner {
        PlInner::Smd { eta_x, eta_y, inner_len, batch } => {
            let y_bar = if cfg.exact_dual_anchor {
                let c = problem.full_dual_payoff(x_t);
                counter.add_full(1);
                let (_, mut y) = inner_max_closed_form(&c, problem.dual_reg().theta());
                apply_floor(&mut y, geom.floor());
                y
            } else {
                geom.center()
            };
            let sub = SaddleSubproblem::new(x_t.to_vec(), y_bar, cfg.eta);
            Ok(smd_solve(&lin, &sub, eta_x, eta_y, inner_len, batch, rng, counter)?.x_hat)
        }
        PlInner::Svrg { stages, overrides } => {
            if !problem.is_smooth() {
                return Err(config("prox-linear with an SVRG inner solver needs a smooth problem"));
            }
            let sub = SaddleSubproblem::new(x_t.to_vec(), geom.center(), cfg.eta);
            Ok(svrg_solve(&lin, &sub, stages, &overrides, rng, counter)?.x_hat)
        }
    }
}

/// Runs `outer_iters − 1` prox-linear steps and reports the last iterate.
pub fn pl_run<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    cfg: &PlConfig<T>,
    rng: &mut dyn RngCore,
    hook: &mut dyn TraceHook<T>,
) -> Result<RunTrace<T>> {
    cfg.validate()?;
    if cfg.outer_iters == 0 {
        return Err(argument("T must be at least 1"));
    }
    let mut x = problem.constraint().project(x0);
    let mut counter = OracleCounter::new(problem.num_components());
    let mut rows = vec![hook.record(0, &x, counter.data_passes())?];
    let mut iterates = vec![x.clone()];
    for t in 1..cfg.outer_iters {
        x = pl_step(problem, &x, cfg, rng, &mut counter)?;
        rows.push(hook.record(t, &x, counter.data_passes())?);
        iterates.push(x.clone());
    }
    Ok(RunTrace {
        argmin_psi_t: argmin_psi(&rows),
        rows,
        tau: cfg.outer_iters - 1,
        x_out: x,
        iterates,
        counter,
        schedule: None,
        seed: None,
    })
}

/// Piecewise-constant step sizes: `values[k]` applies from `starts[k]` on.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule<T> {
    pub starts: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> StepSchedule<T> {
    pub fn constant(step: T) -> Self {
        Self { starts: vec![0], values: vec![step] }
    }

    pub fn new(starts: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() || starts[0] != 0 {
            return Err(config("step schedule needs matching starts/values beginning at 0"));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config("step schedule starts must increase"));
        }
        if values.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(config("step sizes must be positive and finite"));
        }
        Ok(Self { starts, values })
    }

    pub fn at(&self, k: usize) -> T {
        let idx = self.starts.partition_point(|&s| s <= k);
        self.values[idx - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErmOptions<T> {
    pub steps: usize,
    pub schedule: StepSchedule<T>,
    pub batch: usize,
    /// Trace row every this many steps (and at the end).
    pub record_every: usize,
}

/// Projected minibatch SGD on the empirical risk `f(x, ȳ)` with ȳ uniform, i.e.
/// `(1/n) Σ fᵢ(x)` for the DRO losses.
pub fn erm_sgd<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    opts: &ErmOptions<T>,
    rng: &mut dyn RngCore,
    hook: &mut dyn TraceHook<T>,
) -> Result<RunTrace<T>> {
    if opts.record_every == 0 {
        return Err(argument("record stride must be positive"));
    }
    let constraint = problem.constraint();
    let uniform = problem.geometry().center();
    let mut x = constraint.project(x0);
    let mut counter = OracleCounter::new(problem.num_components());
    let mut rows = vec![hook.record(0, &x, counter.data_passes())?];
    let mut iterates = vec![x.clone()];
    for k in 0..opts.steps {
        let (gx, _) = problem.stoch_subgrad(&x, &uniform, opts.batch, rng)?;
        let step = opts.schedule.at(k);
        let trial: Vec<T> = x.iter().zip(&gx).map(|(&xj, &gj)| xj - step * gj).collect();
        x = constraint.project(&trial);
        if !all_finite(&x) {
            return Err(crate::WccError::Numeric {
                stage: "ERM SGD",
                iteration: k,
                detail: "non-finite iterate".into(),
            });
        }
        counter.add_stochastic(opts.batch as u64);
        let done = k + 1;
        if done % opts.record_every == 0 || done == opts.steps {
            rows.push(hook.record(done, &x, counter.data_passes())?);
            iterates.push(x.clone());
        }
    }
    Ok(RunTrace {
        argmin_psi_t: argmin_psi(&rows),
        tau: rows.last().map(|r| r.t).unwrap_or(0),
        rows,
        x_out: x,
        iterates,
        counter,
        schedule: None,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryKind;
    use crate::linalg::{dist2, Matrix};
    use crate::outer_solvers::NoDiagnostics;
    use crate::problems::{DroTruncatedLogistic, QuadraticBilinear};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        let mut m = Matrix::zeros(r, c);
        m.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        m
    }

    fn dro(seed: u64) -> DroTruncatedLogistic<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 16, 3);
        let labels = (0..16).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        DroTruncatedLogistic::new(m, labels, 2.0, 1.0, PrimalConstraint::ball(4.0)).unwrap()
    }

    fn affine(seed: u64, s: f64) -> QuadraticBilinear<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (0..6).map(|_| random_matrix(&mut rng, 3, 2)).collect();
        let b = (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        QuadraticBilinear::new(s, a, b, 0.5, PrimalConstraint::ball(3.0), GeometryKind::EntropySimplex).unwrap()
    }

    fn smd_cfg(eta: f64) -> PlConfig<f64> {
        PlConfig {
            eta,
            inner: PlInner::Smd { eta_x: 0.05, eta_y: 0.05, inner_len: 40, batch: 2 },
            outer_iters: 3,
            exact_dual_anchor: false,
        }
    }

    #[test]
    fn linearization_is_exact_at_anchor_and_lazy() {
        let p = dro(1);
        let x_t = [0.3, -0.2, 0.9];
        let lin = LinearizedProblem::new(&p, &x_t).unwrap();
        assert_eq!(lin.frozen_count(), 0);
        assert_eq!(lin.full_dual_payoff(&x_t), p.full_dual_payoff(&x_t));
        assert_eq!(lin.frozen_count(), 16);
        let lin = LinearizedProblem::new(&p, &x_t).unwrap();
        lin.payoff_component(5, &[0.0; 3]).unwrap();
        assert_eq!(lin.frozen_count(), 1);
    }

    #[test]
    fn one_dimensional_linearization_matches_finite_differences() {
        let a = Matrix::from_rows(&[vec![0.7]]).unwrap();
        let p = QuadraticBilinear::deterministic(-1.3, a, vec![0.2], 0.0, PrimalConstraint::Free, GeometryKind::Euclidean)
            .unwrap();
        let x_t = 0.8;
        let lin = LinearizedProblem::new(&p, &[x_t]).unwrap();
        let h = 1e-6;
        let c = |x: f64| p.payoff_component(0, &[x]).unwrap()[0].value;
        let fd = (c(x_t + h) - c(x_t - h)) / (2.0 * h);
        for x in [-1.0, 0.0, 2.5] {
            let v = lin.payoff_component(0, &[x]).unwrap()[0].value;
            assert!((v - (c(x_t) + fd * (x - x_t))).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_payoff_leaves_point_unchanged() {
        let a = Matrix::zeros(2, 2);
        let p = QuadraticBilinear::deterministic(0.0, a, vec![0.4, -0.1], 0.5, PrimalConstraint::ball(2.0), GeometryKind::EntropySimplex)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counter = OracleCounter::new(1);
        let mut cfg = smd_cfg(1.0);
        cfg.inner = PlInner::Smd { eta_x: 0.05, eta_y: 0.05, inner_len: 40, batch: 1 };
        let x = pl_step(&p, &[0.5, -0.5], &cfg, &mut rng, &mut counter).unwrap();
        assert_eq!(x, vec![0.5, -0.5]);
    }

    #[test]
    fn tiny_eta_barely_moves() {
        let p = dro(2);
        let x_t = [0.3, -0.2, 0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counter = OracleCounter::new(16);
        let x = pl_step(&p, &x_t, &smd_cfg(1e-8), &mut rng, &mut counter).unwrap();
        assert!(dist2(&x, &x_t) < 1e-7);
    }

    #[test]
    fn affine_payoff_pl_svrg_matches_direct_svrg() {
        let p = affine(3, 0.0);
        let x_t = vec![0.4, -0.6];
        let ov = SvrgOverrides { inner_len: Some(30), eta_x: Some(0.05), eta_y: Some(0.05) };
        let cfg = PlConfig { eta: 0.8, inner: PlInner::Svrg { stages: 4, overrides: ov }, outer_iters: 2, exact_dual_anchor: false };
        let mut c1 = OracleCounter::new(6);
        let pl = pl_step(&p, &x_t, &cfg, &mut ChaCha8Rng::seed_from_u64(7), &mut c1).unwrap();
        let sub = SaddleSubproblem::new(x_t.clone(), p.geometry().center(), 0.8);
        let mut c2 = OracleCounter::new(6);
        let direct = svrg_solve(&p, &sub, 4, &ov, &mut ChaCha8Rng::seed_from_u64(7), &mut c2).unwrap();
        assert!(dist2(&pl, &direct.x_hat) < 1e-10);
        assert_eq!(c1, c2);
    }

    #[test]
    fn smd_accounting_with_exact_anchor() {
        let p = dro(4);
        let mut cfg = smd_cfg(0.5);
        cfg.exact_dual_anchor = true;
        let mut counter = OracleCounter::new(16);
        pl_step(&p, &[0.0; 3], &cfg, &mut ChaCha8Rng::seed_from_u64(0), &mut counter).unwrap();
        assert_eq!(counter.stochastic_grad_calls, 39 * 2);
        assert_eq!(counter.full_evaluations, 1);
        let tr = pl_run(&p, &[0.0; 3], &cfg, &mut ChaCha8Rng::seed_from_u64(0), &mut NoDiagnostics).unwrap();
        assert_eq!(tr.counter.stochastic_grad_calls, 2 * 39 * 2);
        assert_eq!(tr.rows.len(), 3);
    }

    #[test]
    fn svrg_inner_rejects_nonsmooth() {
        struct Kinked(DroTruncatedLogistic<f64>);
        impl WccProblem<f64> for Kinked {
            fn primal_dim(&self) -> usize { self.0.primal_dim() }
            fn dual_dim(&self) -> usize { self.0.dual_dim() }
            fn num_components(&self) -> usize { self.0.num_components() }
            fn constraint(&self) -> &PrimalConstraint<f64> { self.0.constraint() }
            fn dual_reg(&self) -> DualRegularizer<f64> { self.0.dual_reg() }
            fn geometry(&self) -> &BregmanGeometry<f64> { self.0.geometry() }
            fn constants(&self) -> &ProblemConstants<f64> { self.0.constants() }
            fn is_smooth(&self) -> bool { false }
            fn payoff_component(&self, i: usize, x: &[f64]) -> Result<Vec<PayoffEntry<f64>>> {
                self.0.payoff_component(i, x)
            }
            fn psi_smoothness(&self) -> Option<f64> { None }
        }
        let p = Kinked(dro(5));
        let cfg = PlConfig { eta: 1.0, inner: PlInner::Svrg { stages: 2, overrides: SvrgOverrides::default() }, outer_iters: 2, exact_dual_anchor: false };
        let err = pl_step(&p, &[0.0; 3], &cfg, &mut ChaCha8Rng::seed_from_u64(0), &mut OracleCounter::new(16)).unwrap_err();
        assert!(matches!(err, crate::WccError::Config(_)));
    }

    #[test]
    fn step_schedule_lookup() {
        let s = StepSchedule::new(vec![0, 10, 25], vec![1.0, 0.5, 0.1]).unwrap();
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(9), 1.0);
        assert_eq!(s.at(10), 0.5);
        assert_eq!(s.at(1000), 0.1);
        assert!(StepSchedule::new(vec![1], vec![1.0f64]).is_err());
    }

    #[test]
    fn erm_zero_loss_is_constant() {
        let p = QuadraticBilinear::deterministic(0.0, Matrix::zeros(1, 2), vec![0.0], 0.0, PrimalConstraint::Free, GeometryKind::Euclidean)
            .unwrap();
        let opts = ErmOptions { steps: 20, schedule: StepSchedule::constant(0.3), batch: 1, record_every: 5 };
        let tr = erm_sgd(&p, &[1.0, 2.0], &opts, &mut ChaCha8Rng::seed_from_u64(0), &mut NoDiagnostics).unwrap();
        assert!(tr.iterates.iter().all(|x| x == &vec![1.0, 2.0]));
        assert_eq!(tr.rows.len(), 5);
        assert_eq!(tr.counter.stochastic_grad_calls, 20);
    }

    #[test]
    fn erm_converges_on_convex_quadratic() {
        // q = 1: risk ½‖x‖² + ā·x + b̄, minimiser −ā
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<Matrix<f64>> = (0..10).map(|_| random_matrix(&mut rng, 1, 2)).collect();
        let mut abar = [0.0; 2];
        for m in &a {
            abar[0] += m.get(0, 0) / 10.0;
            abar[1] += m.get(0, 1) / 10.0;
        }
        let b = vec![vec![0.0]; 10];
        let p = QuadraticBilinear::new(1.0, a, b, 0.0, PrimalConstraint::Free, GeometryKind::Euclidean).unwrap();
        let x_star = [-abar[0], -abar[1]];
        let run = |steps: usize| {
            let sched = StepSchedule::new(vec![0, steps / 2], vec![0.1, 0.01]).unwrap();
            let opts = ErmOptions { steps, schedule: sched, batch: 2, record_every: steps };
            let tr = erm_sgd(&p, &[3.0, -3.0], &opts, &mut ChaCha8Rng::seed_from_u64(5), &mut NoDiagnostics).unwrap();
            dist2(&tr.x_out, &x_star)
        };
        let short = run(20);
        let long = run(2000);
        assert!(long < short && long < 0.05, "{short} {long}");
    }

    #[test]
    fn erm_gradient_unbiased_by_enumeration() {
        let p = dro(6);
        let x = [0.2, 0.1, -0.4];
        let u = p.geometry().center();
        let mut mean = [0.0; 3];
        for i in 0..16 {
            let (g, _) = p.component_grad(i, &x, &u).unwrap();
            for j in 0..3 {
                mean[j] += g[j] / 16.0;
            }
        }
        let (full, _) = p.full_grad(&x, &u);
        for j in 0..3 {
            assert!((mean[j] - full[j]).abs() < 1e-14);
        }
    }
}
