//! WCC problem instances and the oracle interface the solvers consume.
//!
//! Every instance here has the finite-sum, linear-in-y form
//! `f(x, y) = (1/n) Σᵢ yᵀcᵢ(x)`, where each component payoff `cᵢ(x)` is a sparse
//! q-vector. Solvers only see [`WccProblem`].

use rand::seq::index;
use rand::RngCore;

use crate::error::{argument, config, Result};
use crate::geometry::{BregmanGeometry, DualRegularizer, GeometryKind, PrimalConstraint};
use crate::linalg::{dot, norm2, Matrix};
use crate::scalar::Scalar;

/// Regularity constants of an instance. `+∞` marks a bound that is not available.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConstants<T> {
    pub rho: T,
    pub mu: T,
    pub m_x: T,
    pub m_y: T,
    pub m_c: T,
    pub l_x: T,
    pub l_y: T,
    pub d_x: T,
    pub d_y: T,
    pub q_g: T,
    pub q_r: T,
}

impl<T: Scalar> ProblemConstants<T> {
    /// Names of the listed constants that are not finite.
    pub fn missing(&self, names: &[&'static str]) -> Vec<&'static str> {
        names
            .iter()
            .copied()
            .filter(|n| !self.get(n).is_some_and(|v| v.is_finite()))
            .collect()
    }

    /// Fails with a config error naming every non-finite constant in `names`.
    pub fn require(&self, names: &[&'static str], what: &str) -> Result<()> {
        let missing = self.missing(names);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(config(format!(
                "{what} needs finite constants, missing: {}",
                missing.join(", ")
            )))
        }
    }

    pub fn get(&self, name: &str) -> Option<T> {
        Some(match name {
            "rho" => self.rho,
            "mu" => self.mu,
            "M_x" => self.m_x,
            "M_y" => self.m_y,
            "M_c" => self.m_c,
            "L_x" => self.l_x,
            "L_y" => self.l_y,
            "D_x" => self.d_x,
            "D_y" => self.d_y,
            "Q_g" => self.q_g,
            "Q_r" => self.q_r,
            _ => return None,
        })
    }

    /// `(name, value)` pairs in a fixed order, for reports.
    pub fn entries(&self) -> [(&'static str, T); 11] {
        [
            ("rho", self.rho),
            ("mu", self.mu),
            ("M_x", self.m_x),
            ("M_y", self.m_y),
            ("M_c", self.m_c),
            ("L_x", self.l_x),
            ("L_y", self.l_y),
            ("D_x", self.d_x),
            ("D_y", self.d_y),
            ("Q_g", self.q_g),
            ("Q_r", self.q_r),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// `f = (1/n) Σ yᵀcᵢ(x)`: the inner max has a closed form.
    LinearInY,
    General,
}

/// One nonzero coordinate of a component payoff `cᵢ(x)` and its x-gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffEntry<T> {
    pub coord: usize,
    pub value: T,
    pub grad: Vec<T>,
}

pub trait WccProblem<T: Scalar>: Send + Sync {
    fn primal_dim(&self) -> usize;
    fn dual_dim(&self) -> usize;
    /// Number of components `n` of the finite sum (the data-pass unit).
    fn num_components(&self) -> usize;
    fn constraint(&self) -> &PrimalConstraint<T>;
    fn dual_reg(&self) -> DualRegularizer<T>;
    fn geometry(&self) -> &BregmanGeometry<T>;
    fn constants(&self) -> &ProblemConstants<T>;
    fn structure(&self) -> Structure {
        Structure::LinearInY
    }
    /// Whether every component is differentiable in x.
    fn is_smooth(&self) -> bool;

    /// Nonzero entries of `cᵢ(x)` with their gradients in x.
    fn payoff_component(&self, i: usize, x: &[T]) -> Result<Vec<PayoffEntry<T>>>;

    /// Lipschitz constant of ∇ψ when ψ is smooth, `None` otherwise.
    fn psi_smoothness(&self) -> Option<T>;

    /// `c(x) = (1/n) Σ cᵢ(x)`.
    fn full_dual_payoff(&self, x: &[T]) -> Vec<T> {
        self.payoff_and_vjp(x, None).0
    }

    /// Returns `c(x)` and, when weights `w` are given, `Σₖ wₖ ∇cₖ(x)`.
    fn payoff_and_vjp(&self, x: &[T], w: Option<&[T]>) -> (Vec<T>, Vec<T>) {
        let n = self.num_components();
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut c = vec![T::zero(); self.dual_dim()];
        let mut g = vec![T::zero(); self.primal_dim()];
        for i in 0..n {
            let entries = self
                .payoff_component(i, x)
                .expect("component index within range");
            for e in entries {
                c[e.coord] = c[e.coord] + e.value * inv_n;
                if let Some(w) = w {
                    let s = w[e.coord] * inv_n;
                    for (gj, &dj) in g.iter_mut().zip(&e.grad) {
                        *gj = *gj + s * dj;
                    }
                }
            }
        }
        (c, g)
    }

    /// Per-component gradient pair `(∇ₓ fᵢ(x,y), ∇_y fᵢ(x,y))` with
    /// `fᵢ(x,y) = yᵀcᵢ(x)`.
    fn component_grad(&self, i: usize, x: &[T], y: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let entries = self.payoff_component(i, x)?;
        let mut gx = vec![T::zero(); self.primal_dim()];
        let mut gy = vec![T::zero(); self.dual_dim()];
        for e in entries {
            gy[e.coord] = gy[e.coord] + e.value;
            let w = y[e.coord];
            for (gj, &dj) in gx.iter_mut().zip(&e.grad) {
                *gj = *gj + w * dj;
            }
        }
        Ok((gx, gy))
    }

    /// Deterministic gradient pair averaged over all components.
    fn full_grad(&self, x: &[T], y: &[T]) -> (Vec<T>, Vec<T>) {
        let (c, gx) = self.payoff_and_vjp(x, Some(y));
        (gx, c)
    }

    /// Minibatch stochastic subgradient. Indices are drawn uniformly without
    /// replacement; `batch = n` returns the exact full gradient.
    fn stoch_subgrad(
        &self,
        x: &[T],
        y: &[T],
        batch: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let n = self.num_components();
        if n == 0 {
            return Err(config("problem has no components"));
        }
        if batch == 0 || batch > n {
            return Err(argument(format!("batch size {batch} outside 1..={n}")));
        }
        let mut gx = vec![T::zero(); self.primal_dim()];
        let mut gy = vec![T::zero(); self.dual_dim()];
        let mut add = |i: usize| -> Result<()> {
            for e in self.payoff_component(i, x)? {
                gy[e.coord] = gy[e.coord] + e.value;
                let w = y[e.coord];
                for (gj, &dj) in gx.iter_mut().zip(&e.grad) {
                    *gj = *gj + w * dj;
                }
            }
            Ok(())
        };
        if batch == n {
            for i in 0..n {
                add(i)?;
            }
        } else {
            for i in index::sample(rng, n, batch) {
                add(i)?;
            }
        }
        let s = T::one() / T::from_usize_lossy(batch);
        gx.iter_mut().for_each(|v| *v = *v * s);
        gy.iter_mut().for_each(|v| *v = *v * s);
        Ok((gx, gy))
    }
}

/// `(φ_α ∘ ℓ)(m)` and its derivative in the margin `m = b aᵀx`.
#[inline]
fn truncated_margin_loss<T: Scalar>(m: T, alpha: T) -> (T, T) {
    // ℓ = softplus(−m), ℓ' = −σ(−m)
    let e = (-m.abs()).exp();
    let ell = (-m).max(T::zero()) + e.ln_1p();
    let sig_neg = if m >= T::zero() { e / (T::one() + e) } else { T::one() / (T::one() + e) };
    let value = alpha * (ell / alpha).ln_1p();
    let dval = -sig_neg / (T::one() + ell / alpha);
    (value, dval)
}

/// `φ_α(s) = α log(1 + s/α)`.
pub fn truncation<T: Scalar>(s: T, alpha: T) -> T {
    alpha * (s / alpha).ln_1p()
}

/// Truncated logistic loss `φ_α(log(1 + exp(−b aᵀx)))` and its gradient in x.
pub fn truncated_logistic<T: Scalar>(x: &[T], a: &[T], b: T, alpha: T) -> (T, Vec<T>) {
    let (v, d) = truncated_margin_loss(b * dot(a, x), alpha);
    let s = d * b;
    (v, a.iter().map(|&ai| s * ai).collect())
}

/// Upper bound on |(φ_α∘ℓ)''| as a function of the margin: max(1/4, 1/α).
pub fn truncated_curvature_bound<T: Scalar>(alpha: T) -> T {
    T::lit(0.25).max(T::one() / alpha)
}

/// Weak-convexity modulus `max ‖aᵢ‖² / α` of the truncated logistic losses.
pub fn weak_convexity_bound<T: Scalar>(features: &Matrix<T>, alpha: T) -> T {
    let g = features.max_row_norm();
    g * g / alpha
}

/// `max_y yᵀc − θ·KL(y, 1/n)` over the simplex, with its maximiser.
///
/// For θ = 0 the maximiser spreads mass uniformly over the tied maxima.
pub fn inner_max_closed_form<T: Scalar>(c: &[T], theta: T) -> (T, Vec<T>) {
    let n = c.len();
    let m = c.iter().copied().fold(T::neg_infinity(), T::max);
    if theta > T::zero() {
        let mut y: Vec<T> = c.iter().map(|&ci| ((ci - m) / theta).exp()).collect();
        let s: T = y.iter().copied().sum();
        y.iter_mut().for_each(|v| *v = *v / s);
        let value = m + theta * (s / T::from_usize_lossy(n)).ln();
        (value, y)
    } else {
        let ties = c.iter().filter(|&&ci| ci == m).count();
        let w = T::one() / T::from_usize_lossy(ties);
        let y = c.iter().map(|&ci| if ci == m { w } else { T::zero() }).collect();
        (m, y)
    }
}

/// Spread of `cᵢ − θ(log(n yᵢ) + 1)` over the support of `y`: zero at the
/// exact KL-regularised maximiser. Subnormal weights are skipped: their
/// logarithms carry no precision.
pub fn inner_max_kkt_residual<T: Scalar>(c: &[T], theta: T, y: &[T]) -> T {
    let n = T::from_usize_lossy(c.len());
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for (&ci, &yi) in c.iter().zip(y) {
        if yi >= T::min_positive_value() {
            let v = ci - theta * ((n * yi).ln() + T::one());
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    hi - lo
}

fn validate_labels<T: Scalar>(labels: &[T]) -> Result<()> {
    if labels.iter().all(|&b| b == T::one() || b == -T::one()) {
        Ok(())
    } else {
        Err(argument("labels must be ±1"))
    }
}

/// Largest truncated loss attainable over the constraint set.
fn max_loss<T: Scalar>(g: T, constraint: &PrimalConstraint<T>, alpha: T) -> T {
    let radius = match constraint {
        PrimalConstraint::Free => T::infinity(),
        PrimalConstraint::Ball { radius } => *radius,
        PrimalConstraint::Box { lo, hi } => {
            let far: Vec<T> = lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs())).collect();
            norm2(&far)
        }
    };
    let m = g * radius;
    if !m.is_finite() {
        return T::infinity();
    }
    let ell = m.max(T::zero()) + (-m.abs()).exp().ln_1p();
    truncation(ell, alpha)
}

/// DRO with truncated logistic losses:
/// `min_x max_{y∈Δ} Σ yᵢ fᵢ(x) − θ KL(y, 1/n)`.
#[derive(Debug, Clone)]
pub struct DroTruncatedLogistic<T> {
    features: Matrix<T>,
    labels: Vec<T>,
    alpha: T,
    theta: T,
    constraint: PrimalConstraint<T>,
    geometry: BregmanGeometry<T>,
    constants: ProblemConstants<T>,
}

impl<T: Scalar> DroTruncatedLogistic<T> {
    pub fn new(
        features: Matrix<T>,
        labels: Vec<T>,
        alpha: T,
        theta: T,
        constraint: PrimalConstraint<T>,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(config("DRO problem needs at least one example"));
        }
        if labels.len() != n {
            return Err(argument("label count differs from feature rows"));
        }
        validate_labels(&labels)?;
        if !(alpha > T::zero()) {
            return Err(argument(format!("alpha must be positive, got {alpha}")));
        }
        if !(theta >= T::zero()) || !theta.is_finite() {
            return Err(argument(format!("theta must be nonnegative, got {theta}")));
        }
        let geometry = BregmanGeometry::entropy(n);
        let reg = DualRegularizer::from_theta(theta);
        let g = features.max_row_norm();
        let nn = T::from_usize_lossy(n);
        let f_max = max_loss(g, &constraint, alpha);
        let c_phi = truncated_curvature_bound(alpha);
        let constants = ProblemConstants {
            rho: weak_convexity_bound(&features, alpha),
            mu: reg.strong_convexity(&geometry),
            m_x: nn.sqrt() * g,
            m_y: nn * f_max,
            m_c: g,
            l_x: nn * (c_phi * g * g + g),
            l_y: nn * g,
            d_x: constraint.diameter(),
            d_y: geometry.diameter(),
            q_g: T::zero(),
            q_r: reg.oscillation(n),
        };
        Ok(Self { features, labels, alpha, theta, constraint, geometry, constants })
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn constants_mut(&mut self) -> &mut ProblemConstants<T> {
        &mut self.constants
    }

    /// Loss `fᵢ(x)` and gradient of a single example.
    pub fn example_loss(&self, i: usize, x: &[T]) -> (T, Vec<T>) {
        truncated_logistic(x, self.features.row(i), self.labels[i], self.alpha)
    }

    /// Losses of every example; the DRO payoff `c(x)`.
    pub fn losses(&self, x: &[T]) -> Vec<T> {
        (0..self.features.rows())
            .map(|i| {
                let a = self.features.row(i);
                truncated_margin_loss(self.labels[i] * dot(a, x), self.alpha).0
            })
            .collect()
    }
}

impl<T: Scalar> WccProblem<T> for DroTruncatedLogistic<T> {
    fn primal_dim(&self) -> usize {
        self.features.cols()
    }

    fn dual_dim(&self) -> usize {
        self.features.rows()
    }

    fn num_components(&self) -> usize {
        self.features.rows()
    }

    fn constraint(&self) -> &PrimalConstraint<T> {
        &self.constraint
    }

    fn dual_reg(&self) -> DualRegularizer<T> {
        DualRegularizer::from_theta(self.theta)
    }

    fn geometry(&self) -> &BregmanGeometry<T> {
        &self.geometry
    }

    fn constants(&self) -> &ProblemConstants<T> {
        &self.constants
    }

    fn is_smooth(&self) -> bool {
        true
    }

    fn payoff_component(&self, i: usize, x: &[T]) -> Result<Vec<PayoffEntry<T>>> {
        let n = self.features.rows();
        if i >= n {
            return Err(argument(format!("component {i} out of range 0..{n}")));
        }
        let nn = T::from_usize_lossy(n);
        let (v, g) = self.example_loss(i, x);
        Ok(vec![PayoffEntry {
            coord: i,
            value: nn * v,
            grad: g.into_iter().map(|gj| nn * gj).collect(),
        }])
    }

    fn psi_smoothness(&self) -> Option<T> {
        if self.theta > T::zero() {
            let g = self.features.max_row_norm();
            Some(truncated_curvature_bound(self.alpha) * g * g + g * g / self.theta)
        } else {
            None
        }
    }

    fn full_dual_payoff(&self, x: &[T]) -> Vec<T> {
        self.losses(x)
    }

    fn payoff_and_vjp(&self, x: &[T], w: Option<&[T]>) -> (Vec<T>, Vec<T>) {
        let n = self.features.rows();
        let mut c = Vec::with_capacity(n);
        let mut g = vec![T::zero(); self.features.cols()];
        for i in 0..n {
            let a = self.features.row(i);
            let b = self.labels[i];
            let (v, d) = truncated_margin_loss(b * dot(a, x), self.alpha);
            c.push(v);
            if let Some(w) = w {
                let s = w[i] * d * b;
                for (gj, &aj) in g.iter_mut().zip(a) {
                    *gj = *gj + s * aj;
                }
            }
        }
        (c, g)
    }
}

/// Robust learning over m distributions:
/// `min_x max_{y∈Δ_m} Σ_g y_g · (mean loss on group g) − θ KL(y, 1/m)`.
///
/// All groups must have the same size N. Component `l` pairs the l-th example
/// of every group, so one stochastic draw samples a point within each group.
#[derive(Debug, Clone)]
pub struct RobustMultiDist<T> {
    groups: Vec<(Matrix<T>, Vec<T>)>,
    alpha: T,
    theta: T,
    constraint: PrimalConstraint<T>,
    geometry: BregmanGeometry<T>,
    constants: ProblemConstants<T>,
}

impl<T: Scalar> RobustMultiDist<T> {
    pub fn new(
        groups: Vec<(Matrix<T>, Vec<T>)>,
        alpha: T,
        theta: T,
        constraint: PrimalConstraint<T>,
    ) -> Result<Self> {
        let m = groups.len();
        if m == 0 {
            return Err(config("multi-distribution problem needs at least one group"));
        }
        let size = groups[0].0.rows();
        let dim = groups[0].0.cols();
        if size == 0 {
            return Err(config("empty group in multi-distribution problem"));
        }
        for (k, (a, b)) in groups.iter().enumerate() {
            if a.rows() != size || a.cols() != dim || b.len() != size {
                return Err(config(format!(
                    "group {k} has shape {}x{} with {} labels; all groups must be {size}x{dim}",
                    a.rows(),
                    a.cols(),
                    b.len()
                )));
            }
            validate_labels(b)?;
        }
        if !(alpha > T::zero()) {
            return Err(argument(format!("alpha must be positive, got {alpha}")));
        }
        if !(theta >= T::zero()) || !theta.is_finite() {
            return Err(argument(format!("theta must be nonnegative, got {theta}")));
        }
        let geometry = BregmanGeometry::entropy(m);
        let reg = DualRegularizer::from_theta(theta);
        let g = groups
            .iter()
            .map(|(a, _)| a.max_row_norm())
            .fold(T::zero(), T::max);
        let sqrt_m = T::from_usize_lossy(m).sqrt();
        let f_max = max_loss(g, &constraint, alpha);
        let c_phi = truncated_curvature_bound(alpha);
        let constants = ProblemConstants {
            rho: g * g / alpha,
            mu: reg.strong_convexity(&geometry),
            m_x: g,
            m_y: f_max,
            m_c: g,
            l_x: c_phi * g * g + sqrt_m * g,
            l_y: sqrt_m * g,
            d_x: constraint.diameter(),
            d_y: geometry.diameter(),
            q_g: T::zero(),
            q_r: reg.oscillation(m),
        };
        Ok(Self { groups, alpha, theta, constraint, geometry, constants })
    }

    pub fn groups(&self) -> &[(Matrix<T>, Vec<T>)] {
        &self.groups
    }

    pub fn constants_mut(&mut self) -> &mut ProblemConstants<T> {
        &mut self.constants
    }
}

impl<T: Scalar> WccProblem<T> for RobustMultiDist<T> {
    fn primal_dim(&self) -> usize {
        self.groups[0].0.cols()
    }

    fn dual_dim(&self) -> usize {
        self.groups.len()
    }

    fn num_components(&self) -> usize {
        self.groups[0].0.rows()
    }

    fn constraint(&self) -> &PrimalConstraint<T> {
        &self.constraint
    }

    fn dual_reg(&self) -> DualRegularizer<T> {
        DualRegularizer::from_theta(self.theta)
    }

    fn geometry(&self) -> &BregmanGeometry<T> {
        &self.geometry
    }

    fn constants(&self) -> &ProblemConstants<T> {
        &self.constants
    }

    fn is_smooth(&self) -> bool {
        true
    }

    fn payoff_component(&self, l: usize, x: &[T]) -> Result<Vec<PayoffEntry<T>>> {
        let size = self.num_components();
        if l >= size {
            return Err(argument(format!("component {l} out of range 0..{size}")));
        }
        Ok(self
            .groups
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let (value, grad) = truncated_logistic(x, a.row(l), b[l], self.alpha);
                PayoffEntry { coord: k, value, grad }
            })
            .collect())
    }

    fn psi_smoothness(&self) -> Option<T> {
        if self.theta > T::zero() {
            let g = self.constants.m_c;
            Some(truncated_curvature_bound(self.alpha) * g * g + g * g / self.theta)
        } else {
            None
        }
    }
}

/// Quadratic-plus-affine payoff used for verification:
/// `cᵢ(x) = ½ s‖x‖² 𝟙 + Aᵢx + bᵢ`, so `f(x, y) = ½ s‖x‖² + yᵀ(Āx + b̄)`.
///
/// Negative `s` gives a (−s)-weakly convex instance; `s ≥ 0` a convex one.
#[derive(Debug, Clone)]
pub struct QuadraticBilinear<T> {
    s: T,
    a: Vec<Matrix<T>>,
    b: Vec<Vec<T>>,
    theta: T,
    constraint: PrimalConstraint<T>,
    geometry: BregmanGeometry<T>,
    constants: ProblemConstants<T>,
}

impl<T: Scalar> QuadraticBilinear<T> {
    /// `a[i]` is q×p and `b[i]` has length q for every component i.
    pub fn new(
        s: T,
        a: Vec<Matrix<T>>,
        b: Vec<Vec<T>>,
        theta: T,
        constraint: PrimalConstraint<T>,
        kind: GeometryKind,
    ) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(config("need one (A, b) pair per component"));
        }
        let (q, p) = (a[0].rows(), a[0].cols());
        if q == 0 || p == 0 {
            return Err(config("empty payoff matrix"));
        }
        if a.iter().any(|m| m.rows() != q || m.cols() != p) || b.iter().any(|v| v.len() != q) {
            return Err(config("inconsistent component shapes"));
        }
        if !(theta >= T::zero()) {
            return Err(argument("theta must be nonnegative"));
        }
        let reg = DualRegularizer::from_theta(theta);
        if kind == GeometryKind::Euclidean && theta > T::zero() {
            return Err(config("KL dual regulariser needs the entropy geometry"));
        }
        let geometry = BregmanGeometry::new(kind, q);
        let n = a.len();
        let radius = match &constraint {
            PrimalConstraint::Free => T::infinity(),
            PrimalConstraint::Ball { radius } => *radius,
            PrimalConstraint::Box { lo, hi } => {
                let far: Vec<T> = lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs())).collect();
                norm2(&far)
            }
        };
        let s_rad = if s == T::zero() { T::zero() } else { s.abs() * radius };
        let row_max = a.iter().map(|m| m.max_row_norm()).fold(T::zero(), T::max);
        let frob_max = a.iter().map(|m| m.frobenius()).fold(T::zero(), T::max);
        let b_max = b
            .iter()
            .flat_map(|v| v.iter().map(|x| x.abs()))
            .fold(T::zero(), T::max);
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut a_bar = Matrix::zeros(q, p);
        for m in &a {
            for (dst, &src) in a_bar.data_mut().iter_mut().zip(m.as_slice()) {
                *dst = *dst + src * inv_n;
            }
        }
        let qq = T::from_usize_lossy(q);
        // ‖·‖_* is ℓ∞ (entropy) or ℓ2 (Euclidean); an ℓ∞ bound times √q covers both.
        let dual_factor = match kind {
            GeometryKind::EntropySimplex => T::one(),
            GeometryKind::Euclidean => qq.sqrt(),
        };
        let half_s_r2 = if s == T::zero() { T::zero() } else { T::lit(0.5) * s.abs() * radius * radius };
        let rad_term = if row_max == T::zero() { T::zero() } else { row_max * radius };
        let constants = ProblemConstants {
            rho: (-s).max(T::zero()),
            mu: reg.strong_convexity(&geometry),
            m_x: s_rad + row_max,
            m_y: dual_factor * (half_s_r2 + rad_term + b_max),
            m_c: dual_factor * (s_rad + a_bar.max_row_norm()),
            l_x: s.abs() + frob_max,
            l_y: qq.sqrt() * s_rad + frob_max,
            d_x: constraint.diameter(),
            d_y: geometry.diameter(),
            q_g: T::zero(),
            q_r: reg.oscillation(q),
        };
        Ok(Self { s, a, b, theta, constraint, geometry, constants })
    }

    /// Single-component instance `c(x) = ½ s‖x‖² 𝟙 + Ax + b`.
    pub fn deterministic(
        s: T,
        a: Matrix<T>,
        b: Vec<T>,
        theta: T,
        constraint: PrimalConstraint<T>,
        kind: GeometryKind,
    ) -> Result<Self> {
        Self::new(s, vec![a], vec![b], theta, constraint, kind)
    }

    pub fn curvature(&self) -> T {
        self.s
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    /// Mean payoff matrix `Ā` and offset `b̄`.
    pub fn mean_affine(&self) -> (Matrix<T>, Vec<T>) {
        let (q, p) = (self.a[0].rows(), self.a[0].cols());
        let inv_n = T::one() / T::from_usize_lossy(self.a.len());
        let mut a_bar = Matrix::zeros(q, p);
        let mut b_bar = vec![T::zero(); q];
        for (m, v) in self.a.iter().zip(&self.b) {
            for (dst, &src) in a_bar.data_mut().iter_mut().zip(m.as_slice()) {
                *dst = *dst + src * inv_n;
            }
            for (dst, &src) in b_bar.iter_mut().zip(v) {
                *dst = *dst + src * inv_n;
            }
        }
        (a_bar, b_bar)
    }

    pub fn constants_mut(&mut self) -> &mut ProblemConstants<T> {
        &mut self.constants
    }
}

impl<T: Scalar> WccProblem<T> for QuadraticBilinear<T> {
    fn primal_dim(&self) -> usize {
        self.a[0].cols()
    }

    fn dual_dim(&self) -> usize {
        self.a[0].rows()
    }

    fn num_components(&self) -> usize {
        self.a.len()
    }

    fn constraint(&self) -> &PrimalConstraint<T> {
        &self.constraint
    }

    fn dual_reg(&self) -> DualRegularizer<T> {
        DualRegularizer::from_theta(self.theta)
    }

    fn geometry(&self) -> &BregmanGeometry<T> {
        &self.geometry
    }

    fn constants(&self) -> &ProblemConstants<T> {
        &self.constants
    }

    fn is_smooth(&self) -> bool {
        true
    }

    fn payoff_component(&self, i: usize, x: &[T]) -> Result<Vec<PayoffEntry<T>>> {
        let n = self.a.len();
        if i >= n {
            return Err(argument(format!("component {i} out of range 0..{n}")));
        }
        let quad = T::lit(0.5) * self.s * dot(x, x);
        let ax = self.a[i].matvec(x);
        Ok((0..self.dual_dim())
            .map(|k| PayoffEntry {
                coord: k,
                value: quad + ax[k] + self.b[i][k],
                grad: x
                    .iter()
                    .zip(self.a[i].row(k))
                    .map(|(&xj, &aj)| self.s * xj + aj)
                    .collect(),
            })
            .collect())
    }

    fn psi_smoothness(&self) -> Option<T> {
        let (a_bar, _) = self.mean_affine();
        if self.theta > T::zero() {
            let op = a_bar.frobenius();
            Some(self.s.abs() + op * op / self.theta)
        } else if self.dual_dim() == 1 {
            Some(self.s.abs())
        } else {
            None
        }
    }
}

/// Checks that a WCC problem can be driven by the given numbers of primal and
/// dual coordinates.
pub(crate) fn check_point<T: Scalar, P: WccProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
    y: Option<&[T]>,
) -> Result<()> {
    if x.len() != problem.primal_dim() {
        return Err(argument(format!(
            "primal point has length {}, problem expects {}",
            x.len(),
            problem.primal_dim()
        )));
    }
    if let Some(y) = y {
        if y.len() != problem.dual_dim() {
            return Err(argument(format!(
                "dual point has length {}, problem expects {}",
                y.len(),
                problem.dual_dim()
            )));
        }
    }
    Ok(())
}
