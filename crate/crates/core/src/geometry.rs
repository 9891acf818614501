//! Bregman geometry for the dual block, primal feasible sets, and the
//! closed-form prox/mirror steps every solver uses for its x- and y-updates.
//!
//! The dual variable always lives on the probability simplex. Two distance
//! generating functions are supported:
//!
//! * `Euclidean`: `d(y) = ½‖y‖²`, paired with the ℓ2 norm, `V(y, y') = ½‖y − y'‖²`.
//! * `EntropySimplex`: `d(y) = Σ yᵢ log yᵢ`, paired with the ℓ1 norm, `V = KL`.
//!
//! Entropy steps are evaluated in the log domain and floored so iterates stay in
//! the relative interior of the simplex.

use crate::error::{argument, config, Result, WccError};
use crate::linalg::{dist2, dist2_sq, norm1, norm2, norm_inf};
use crate::scalar::Scalar;

/// Default lower bound on simplex coordinates under the entropy geometry.
pub const DEFAULT_SIMPLEX_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    Euclidean,
    EntropySimplex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BregmanGeometry<T> {
    kind: GeometryKind,
    dim: usize,
    floor: T,
}

impl<T: Scalar> BregmanGeometry<T> {
    pub fn new(kind: GeometryKind, dim: usize) -> Self {
        assert!(dim > 0, "geometry dimension must be positive");
        let floor = match kind {
            GeometryKind::Euclidean => T::zero(),
            GeometryKind::EntropySimplex => T::lit(DEFAULT_SIMPLEX_FLOOR),
        };
        Self { kind, dim, floor }
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(GeometryKind::Euclidean, dim)
    }

    pub fn entropy(dim: usize) -> Self {
        Self::new(GeometryKind::EntropySimplex, dim)
    }

    /// Overrides the coordinate floor. Must satisfy `0 ≤ floor < 1/dim`.
    pub fn with_floor(mut self, floor: T) -> Self {
        assert!(
            floor >= T::zero() && floor * T::from_usize_lossy(self.dim) < T::one(),
            "simplex floor must lie in [0, 1/dim)"
        );
        self.floor = floor;
        self
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn floor(&self) -> T {
        self.floor
    }

    /// Distance generating function `d_y(y)`.
    pub fn dgf(&self, y: &[T]) -> T {
        match self.kind {
            GeometryKind::Euclidean => T::lit(0.5) * crate::linalg::norm2_sq(y),
            GeometryKind::EntropySimplex => y
                .iter()
                .filter(|&&v| v > T::zero())
                .map(|&v| v * v.ln())
                .sum(),
        }
    }

    /// Minimiser of `d_y` over the simplex (the uniform point for both geometries).
    pub fn center(&self) -> Vec<T> {
        vec![T::one() / T::from_usize_lossy(self.dim); self.dim]
    }

    /// `D_y = sqrt(2 max d_y − 2 min d_y)` over the simplex.
    pub fn diameter(&self) -> T {
        let n = T::from_usize_lossy(self.dim);
        match self.kind {
            // max ½‖y‖² = ½ at a vertex, min = 1/(2n) at the center
            GeometryKind::Euclidean => (T::one() - T::one() / n).sqrt(),
            // max Σ y log y = 0 at a vertex, min = −log n
            GeometryKind::EntropySimplex => (T::lit(2.0) * n.ln()).sqrt(),
        }
    }

    /// Norm that `d_y` is 1-strongly convex against (ℓ2 or ℓ1).
    pub fn paired_norm(&self, v: &[T]) -> T {
        match self.kind {
            GeometryKind::Euclidean => norm2(v),
            GeometryKind::EntropySimplex => norm1(v),
        }
    }

    /// Dual of [`paired_norm`](Self::paired_norm) (ℓ2 or ℓ∞).
    pub fn dual_norm(&self, v: &[T]) -> T {
        match self.kind {
            GeometryKind::Euclidean => norm2(v),
            GeometryKind::EntropySimplex => norm_inf(v),
        }
    }

    /// True when `y` is on the simplex (within `tol`) and every coordinate is at
    /// least the floor.
    pub fn is_interior(&self, y: &[T], tol: T) -> bool {
        y.len() == self.dim
            && y.iter().all(|&v| v >= self.floor - tol && v.is_finite())
            && (y.iter().copied().sum::<T>() - T::one()).abs() <= tol
            && (self.kind == GeometryKind::Euclidean || y.iter().all(|&v| v > T::zero()))
    }

    /// Bregman divergence `V(y, y_ref) = d(y) − d(y_ref) − ⟨∇d(y_ref), y − y_ref⟩`.
    pub fn divergence(&self, y: &[T], y_ref: &[T]) -> Result<T> {
        if y.len() != self.dim || y_ref.len() != self.dim {
            return Err(argument(format!(
                "divergence expects vectors of length {}, got {} and {}",
                self.dim,
                y.len(),
                y_ref.len()
            )));
        }
        match self.kind {
            GeometryKind::Euclidean => Ok(T::lit(0.5) * dist2_sq(y, y_ref)),
            GeometryKind::EntropySimplex => {
                let mut acc = T::zero();
                for (&a, &b) in y.iter().zip(y_ref) {
                    if !(b > T::zero()) || b < self.floor {
                        return Err(WccError::Domain(format!(
                            "reference point coordinate {b} is on the simplex boundary"
                        )));
                    }
                    if a < T::zero() || !a.is_finite() {
                        return Err(WccError::Domain(format!(
                            "point coordinate {a} outside the nonnegative orthant"
                        )));
                    }
                    // a log(a/b) − a + b, with 0 log 0 = 0
                    let term = if a > T::zero() { a * (a / b).ln() } else { T::zero() };
                    acc = acc + term - a + b;
                }
                Ok(acc.max(T::zero()))
            }
        }
    }

    /// Composite mirror step
    ///
    /// `argmin_y −⟨y, g⟩ + (1/η) V(y, y0) + Σₖ aₖ V(y, yₖ) + r(y)`
    ///
    /// over the simplex. Anchors are `(weight, point)` pairs with nonnegative weights.
    pub fn mirror_step(
        &self,
        y0: &[T],
        g: &[T],
        eta: T,
        anchors: &[(T, &[T])],
        reg: &DualRegularizer<T>,
    ) -> Result<Vec<T>> {
        if !(eta > T::zero()) || !eta.is_finite() {
            return Err(argument(format!("mirror step size must be positive, got {eta}")));
        }
        if y0.len() != self.dim || g.len() != self.dim {
            return Err(argument("mirror step vector length mismatch"));
        }
        for (w, p) in anchors {
            if !(*w >= T::zero()) || !w.is_finite() {
                return Err(argument(format!("anchor weight must be nonnegative, got {w}")));
            }
            if p.len() != self.dim {
                return Err(argument("anchor length mismatch"));
            }
        }
        match self.kind {
            GeometryKind::EntropySimplex => self.entropy_step(y0, g, eta, anchors, reg),
            GeometryKind::Euclidean => self.euclidean_step(y0, g, eta, anchors, reg),
        }
    }

    fn entropy_step(
        &self,
        y0: &[T],
        g: &[T],
        eta: T,
        anchors: &[(T, &[T])],
        reg: &DualRegularizer<T>,
    ) -> Result<Vec<T>> {
        let check_interior = |p: &[T]| -> Result<()> {
            if p.iter().any(|&v| !(v > T::zero())) {
                return Err(WccError::Domain(
                    "entropy mirror step needs strictly positive anchor points".into(),
                ));
            }
            Ok(())
        };
        check_interior(y0)?;
        let inv_eta = T::one() / eta;
        let mut total = inv_eta + reg.theta();
        for (w, p) in anchors {
            if *w > T::zero() {
                check_interior(p)?;
                total = total + *w;
            }
        }
        // The θ·log(1/n) contribution of the KL regulariser is the same for every
        // coordinate and cancels in the normalisation.
        let mut logits: Vec<T> = (0..self.dim)
            .map(|i| {
                let mut num = g[i] + inv_eta * y0[i].ln();
                for (w, p) in anchors {
                    if *w > T::zero() {
                        num = num + *w * p[i].ln();
                    }
                }
                num / total
            })
            .collect();
        normalize_log_weights(&mut logits);
        apply_floor(&mut logits, self.floor);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(WccError::Numeric {
                stage: "entropy mirror step",
                iteration: 0,
                detail: "non-finite coordinate after normalisation".into(),
            });
        }
        Ok(logits)
    }

    fn euclidean_step(
        &self,
        y0: &[T],
        g: &[T],
        eta: T,
        anchors: &[(T, &[T])],
        reg: &DualRegularizer<T>,
    ) -> Result<Vec<T>> {
        if reg.theta() > T::zero() {
            return Err(config(
                "the KL-to-uniform dual regulariser requires the entropy geometry",
            ));
        }
        let inv_eta = T::one() / eta;
        let mut total = inv_eta;
        let mut target: Vec<T> = (0..self.dim).map(|i| g[i] + inv_eta * y0[i]).collect();
        for (w, p) in anchors {
            total = total + *w;
            for (t, &pi) in target.iter_mut().zip(p.iter()) {
                *t = *t + *w * pi;
            }
        }
        for t in target.iter_mut() {
            *t = *t / total;
        }
        let mut y = project_simplex(&target);
        apply_floor(&mut y, self.floor);
        Ok(y)
    }
}

/// Replaces log-weights by the normalised probabilities `exp(lᵢ − max) / Σ`.
pub(crate) fn normalize_log_weights<T: Scalar>(logits: &mut [T]) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in logits.iter_mut() {
        *v = (*v - m).exp();
        sum = sum + *v;
    }
    for v in logits.iter_mut() {
        *v = *v / sum;
    }
}

/// Raises coordinates below `floor` to exactly `floor` and rescales the rest so
/// the vector still sums to one.
pub fn apply_floor<T: Scalar>(y: &mut [T], floor: T) {
    if floor <= T::zero() {
        return;
    }
    let mut fixed = vec![false; y.len()];
    loop {
        let mut changed = false;
        for (v, f) in y.iter_mut().zip(fixed.iter_mut()) {
            if !*f && *v < floor {
                *v = floor;
                *f = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free_mass: T = y
            .iter()
            .zip(&fixed)
            .filter(|(_, &f)| !f)
            .map(|(&v, _)| v)
            .sum();
        let target = T::one() - floor * T::from_usize_lossy(n_fixed);
        if free_mass > T::zero() {
            let s = target / free_mass;
            for (v, &f) in y.iter_mut().zip(&fixed) {
                if !f {
                    *v = *v * s;
                }
            }
        }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut sorted: Vec<T> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = T::zero();
    let mut tau = T::zero();
    for (k, &u) in sorted.iter().enumerate() {
        cumsum = cumsum + u;
        let candidate = (cumsum - T::one()) / T::from_usize_lossy(k + 1);
        if u - candidate > T::zero() {
            tau = candidate;
        }
    }
    v.iter().map(|&u| (u - tau).max(T::zero())).collect()
}

/// The dual regulariser `r(y)` restricted to the simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualRegularizer<T> {
    /// `r = 0` on the simplex.
    SimplexIndicator,
    /// `r(y) = θ · KL(y, 1/n)` with θ > 0.
    KlToUniform { theta: T },
}

impl<T: Scalar> DualRegularizer<T> {
    /// θ for the KL regulariser, 0 for the plain simplex.
    pub fn from_theta(theta: T) -> Self {
        if theta > T::zero() {
            Self::KlToUniform { theta }
        } else {
            Self::SimplexIndicator
        }
    }

    pub fn theta(&self) -> T {
        match self {
            Self::SimplexIndicator => T::zero(),
            Self::KlToUniform { theta } => *theta,
        }
    }

    pub fn value(&self, y: &[T]) -> T {
        match self {
            Self::SimplexIndicator => T::zero(),
            Self::KlToUniform { theta } => {
                let n = T::from_usize_lossy(y.len());
                let neg_entropy: T = y
                    .iter()
                    .filter(|&&v| v > T::zero())
                    .map(|&v| v * v.ln())
                    .sum();
                *theta * (neg_entropy + n.ln())
            }
        }
    }

    /// Strong-convexity modulus μ with respect to the geometry's divergence.
    pub fn strong_convexity(&self, geom: &BregmanGeometry<T>) -> T {
        match (self, geom.kind()) {
            (Self::SimplexIndicator, _) => T::zero(),
            (Self::KlToUniform { theta }, GeometryKind::EntropySimplex) => *theta,
            // KL is 1-strongly convex in ℓ1, hence also against ½‖·‖₂².
            (Self::KlToUniform { theta }, GeometryKind::Euclidean) => *theta,
        }
    }

    /// `Q_r = max r − min r` over the simplex.
    pub fn oscillation(&self, dim: usize) -> T {
        self.theta() * T::from_usize_lossy(dim).ln()
    }
}

/// Primal feasible set `X`; `g(x)` is its indicator.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimalConstraint<T> {
    Free,
    /// `{x : ‖x‖₂ ≤ radius}`
    Ball { radius: T },
    /// `{x : lo ≤ x ≤ hi}` coordinatewise
    Box { lo: Vec<T>, hi: Vec<T> },
}

impl<T: Scalar> PrimalConstraint<T> {
    pub fn ball(radius: T) -> Self {
        assert!(radius > T::zero(), "ball radius must be positive");
        Self::Ball { radius }
    }

    pub fn boxed(lo: Vec<T>, hi: Vec<T>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must have equal length");
        assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h), "box needs lo ≤ hi");
        Self::Box { lo, hi }
    }

    /// `D_x = max ‖x − x'‖₂` over the set.
    pub fn diameter(&self) -> T {
        match self {
            Self::Free => T::infinity(),
            Self::Ball { radius } => T::lit(2.0) * *radius,
            Self::Box { lo, hi } => dist2(hi, lo),
        }
    }

    pub fn contains(&self, x: &[T], tol: T) -> bool {
        match self {
            Self::Free => true,
            Self::Ball { radius } => norm2(x) <= *radius + tol,
            Self::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol),
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &[T]) -> Vec<T> {
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, x: &mut [T]) {
        match self {
            Self::Free => {}
            Self::Ball { radius } => {
                let nrm = norm2(x);
                // points already rescaled onto the sphere may sit a few ulps outside
                if nrm > *radius * (T::one() + T::lit(4.0) * T::epsilon()) {
                    let s = *radius / nrm;
                    for v in x.iter_mut() {
                        *v = *v * s;
                    }
                }
            }
            Self::Box { lo, hi } => {
                for (v, (&l, &h)) in x.iter_mut().zip(lo.iter().zip(hi)) {
                    *v = v.max(l).min(h);
                }
            }
        }
    }
}

/// Primal proximal step
///
/// `argmin_x ⟨x, g⟩ + ‖x − x_j‖²/(2η) + ‖x − x̄‖²/(2γ) + g_X(x)`.
///
/// Both quadratics are isotropic, so the constrained minimiser is the
/// projection of the unconstrained one. `gamma = +∞` drops the anchor term.
pub fn primal_prox_step<T: Scalar>(
    constraint: &PrimalConstraint<T>,
    x_j: &[T],
    g: &[T],
    eta_x: T,
    gamma: T,
    x_bar: &[T],
) -> Result<Vec<T>> {
    if !(eta_x > T::zero()) || !eta_x.is_finite() {
        return Err(argument(format!("primal step must be positive, got {eta_x}")));
    }
    if !(gamma > T::zero()) {
        return Err(argument(format!("proximal weight γ must be positive, got {gamma}")));
    }
    if x_j.len() != g.len() || x_bar.len() != g.len() {
        return Err(argument("primal prox step vector length mismatch"));
    }
    let a = T::one() / eta_x;
    let b = if gamma.is_infinite() { T::zero() } else { T::one() / gamma };
    let denom = a + b;
    let mut out: Vec<T> = (0..g.len())
        .map(|i| (a * x_j[i] + b * x_bar[i] - g[i]) / denom)
        .collect();
    constraint.project_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize, min: f64) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + min).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn euclidean_divergence_is_half_squared_distance() {
        let g = BregmanGeometry::<f64>::euclidean(2);
        assert_eq!(g.divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn entropy_divergence_vanishes_on_diagonal() {
        let g = BregmanGeometry::<f64>::entropy(2);
        assert_eq!(g.divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_divergence_matches_kl_by_terms() {
        let g = BregmanGeometry::<f64>::entropy(2);
        let (y, r): ([f64; 2], [f64; 2]) = ([0.75, 0.25], [0.5, 0.5]);
        // definition term by term: d(y) − d(r) − ⟨log r + 1, y − r⟩
        let d = |v: &[f64]| v.iter().map(|a| a * a.ln()).sum::<f64>();
        let lin: f64 = (0..2).map(|i| (r[i].ln() + 1.0) * (y[i] - r[i])).sum();
        let by_definition = d(&y) - d(&r) - lin;
        let kl: f64 = (0..2).map(|i| y[i] * (y[i] / r[i]).ln()).sum();
        let v = g.divergence(&y, &r).unwrap();
        assert_abs_diff_eq!(v, by_definition, epsilon = 1e-15);
        assert_abs_diff_eq!(v, kl, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.130812, epsilon = 1e-6);
    }

    #[test]
    fn entropy_divergence_rejects_boundary_reference() {
        let g = BregmanGeometry::<f64>::entropy(2);
        assert!(matches!(
            g.divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(WccError::Domain(_))
        ));
    }

    #[test]
    fn diameters_follow_dgf_oscillation() {
        let e = BregmanGeometry::<f64>::entropy(8);
        assert_abs_diff_eq!(e.diameter(), (2.0 * 8f64.ln()).sqrt(), epsilon = 1e-15);
        let u = BregmanGeometry::<f64>::euclidean(4);
        assert_abs_diff_eq!(u.diameter(), (0.75f64).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn mirror_step_zero_gradient_returns_start() {
        for geom in [BregmanGeometry::<f64>::entropy(3), BregmanGeometry::euclidean(3)] {
            let y0 = geom.center();
            let y = geom
                .mirror_step(&y0, &[0.0; 3], 0.7, &[], &DualRegularizer::SimplexIndicator)
                .unwrap();
            for (a, b) in y.iter().zip(&y0) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn entropy_step_two_point_closed_form() {
        let geom = BregmanGeometry::<f64>::entropy(2);
        let y = geom
            .mirror_step(
                &[0.5, 0.5],
                &[2f64.ln(), 0.0],
                1.0,
                &[],
                &DualRegularizer::SimplexIndicator,
            )
            .unwrap();
        // grid oracle over the 2-simplex
        let obj = |t: f64| {
            let v = [t, 1.0 - t];
            -v[0] * 2f64.ln() + geom.divergence(&v, &[0.5, 0.5]).unwrap()
        };
        let best = (1..100_000)
            .map(|k| k as f64 / 100_000.0)
            .min_by(|a, b| obj(*a).partial_cmp(&obj(*b)).unwrap())
            .unwrap();
        assert_abs_diff_eq!(best, 2.0 / 3.0, epsilon = 2e-5);
        assert_abs_diff_eq!(y[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(y[1], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn coinciding_anchors_with_kl_stay_uniform() {
        let geom = BregmanGeometry::<f64>::entropy(4);
        let u = geom.center();
        let y = geom
            .mirror_step(
                &u,
                &[0.0; 4],
                0.3,
                &[(2.0, &u[..])],
                &DualRegularizer::KlToUniform { theta: 1.5 },
            )
            .unwrap();
        for v in y {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn euclidean_geometry_rejects_kl_regulariser() {
        let geom = BregmanGeometry::<f64>::euclidean(2);
        let r = geom.mirror_step(
            &[0.5, 0.5],
            &[0.0, 0.0],
            1.0,
            &[],
            &DualRegularizer::KlToUniform { theta: 1.0 },
        );
        assert!(matches!(r, Err(WccError::Config(_))));
    }

    #[test]
    fn mirror_step_rejects_nonpositive_step() {
        let geom = BregmanGeometry::<f64>::entropy(2);
        for eta in [0.0, -1.0, f64::NAN] {
            assert!(geom
                .mirror_step(&[0.5, 0.5], &[0.0, 0.0], eta, &[], &DualRegularizer::SimplexIndicator)
                .is_err());
        }
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let geom = BregmanGeometry::<f64>::entropy(3);
        let y = geom
            .mirror_step(
                &geom.center(),
                &[1e6, -1e6, 0.0],
                1e3,
                &[],
                &DualRegularizer::SimplexIndicator,
            )
            .unwrap();
        assert!(y.iter().all(|v| v.is_finite() && *v >= geom.floor()));
        assert_abs_diff_eq!(y.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(y[0] > 0.999);
    }

    #[test]
    fn floor_keeps_exact_mass() {
        let mut y = vec![1.0 - 2e-20, 1e-20, 1e-20];
        apply_floor(&mut y, 1e-12);
        assert_eq!(y[1], 1e-12);
        assert_eq!(y[2], 1e-12);
        assert_abs_diff_eq!(y.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn projection_examples() {
        let free = PrimalConstraint::<f64>::Free;
        assert_eq!(free.project(&[3.0, -7.0]), vec![3.0, -7.0]);
        let bx = PrimalConstraint::boxed(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert_eq!(bx.project(&[2.0, -1.0]), vec![1.0, 0.0]);
        let ball = PrimalConstraint::ball(1.0);
        let p = ball.project(&[3.0, 4.0]);
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-15);
        // radial scaling: unit norm and colinear with the input
        assert_abs_diff_eq!(norm2(&p), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0] * 4.0 - p[1] * 3.0, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn constraint_diameters() {
        assert!(PrimalConstraint::<f64>::Free.diameter().is_infinite());
        assert_eq!(PrimalConstraint::ball(3.0f64).diameter(), 6.0);
        let bx = PrimalConstraint::boxed(vec![0.0, -1.0], vec![3.0, 3.0f64]);
        assert_eq!(bx.diameter(), 5.0);
    }

    #[test]
    fn prox_step_fixed_point_and_closed_form() {
        let free = PrimalConstraint::<f64>::Free;
        let xb = [0.3, -0.2];
        assert_eq!(
            primal_prox_step(&free, &xb, &[0.0, 0.0], 0.5, 2.0, &xb).unwrap(),
            xb.to_vec()
        );
        let x = primal_prox_step(&free, &[2.0, 0.0], &[1.0, 0.0], 1.0, 1.0, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(x[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-15);
        // finite-difference stationarity of the unconstrained subobjective
        let obj = |v: &[f64]| {
            v[0] * 1.0 + 0.5 * ((v[0] - 2.0).powi(2) + v[1].powi(2)) + 0.5 * (v[0].powi(2) + v[1].powi(2))
        };
        let h = 1e-6;
        let d0 = (obj(&[x[0] + h, x[1]]) - obj(&[x[0] - h, x[1]])) / (2.0 * h);
        assert_abs_diff_eq!(d0, 0.0, epsilon = 1e-8);

        let ball = PrimalConstraint::ball(0.1);
        let xp = primal_prox_step(&ball, &[2.0, 0.0], &[1.0, 0.0], 1.0, 1.0, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(xp[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(xp[1], 0.0, epsilon = 1e-15);
        // projection optimality: ⟨x⁺ − x_u, x − x⁺⟩ ≥ 0 for feasible x, i.e. the
        // obtuse-angle criterion against the unconstrained point x_u
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let cand = ball.project(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let lhs = (0.5 - xp[0]) * (cand[0] - xp[0]) + (0.0 - xp[1]) * (cand[1] - xp[1]);
            assert!(lhs <= 1e-15);
        }
    }

    #[test]
    fn prox_step_validates_arguments() {
        let free = PrimalConstraint::<f64>::Free;
        assert!(primal_prox_step(&free, &[0.0], &[0.0], 0.0, 1.0, &[0.0]).is_err());
        assert!(primal_prox_step(&free, &[0.0], &[0.0], 1.0, -1.0, &[0.0]).is_err());
    }

    // Grid oracle for the composite mirror step objective (q ≤ 3).
    fn step_objective(
        geom: &BregmanGeometry<f64>,
        y: &[f64],
        y0: &[f64],
        g: &[f64],
        eta: f64,
        anchors: &[(f64, &[f64])],
        reg: &DualRegularizer<f64>,
    ) -> f64 {
        let mut v = -crate::linalg::dot(y, g) + geom.divergence(y, y0).unwrap() / eta + reg.value(y);
        for (w, p) in anchors {
            v += w * geom.divergence(y, p).unwrap();
        }
        v
    }

    fn grid_minimum(q: usize, f: &dyn Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
        let res = 1e-3;
        let steps = (1.0 / res) as usize;
        let mut best = (vec![1.0 / q as f64; q], f64::INFINITY);
        let consider = |y: Vec<f64>, best: &mut (Vec<f64>, f64)| {
            let v = f(&y);
            if v < best.1 {
                *best = (y, v);
            }
        };
        match q {
            2 => {
                for k in 0..=steps {
                    let t = k as f64 * res;
                    consider(vec![t, 1.0 - t], &mut best);
                }
            }
            3 => {
                for a in 0..=steps {
                    for b in 0..=(steps - a) {
                        let (u, v) = (a as f64 * res, b as f64 * res);
                        consider(vec![u, v, (1.0 - u - v).max(0.0)], &mut best);
                    }
                }
            }
            _ => unreachable!(),
        }
        // local refinement: pattern search along simplex edge directions
        let mut h = res;
        while h > 1e-13 {
            let mut improved = false;
            for i in 0..q {
                for j in 0..q {
                    if i == j {
                        continue;
                    }
                    let mut y = best.0.clone();
                    if y[j] - h < 0.0 {
                        continue;
                    }
                    y[i] += h;
                    y[j] -= h;
                    let v = f(&y);
                    if v < best.1 {
                        best = (y, v);
                        improved = true;
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        best
    }

    #[test]
    fn mirror_step_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..24 {
            let q = if case % 2 == 0 { 2 } else { 3 };
            let entropy = case % 4 < 2;
            let geom = if entropy {
                BregmanGeometry::<f64>::entropy(q)
            } else {
                BregmanGeometry::<f64>::euclidean(q)
            };
            let reg = if entropy && case % 3 == 0 {
                DualRegularizer::KlToUniform { theta: rng.random_range(0.1..2.0) }
            } else {
                DualRegularizer::SimplexIndicator
            };
            let y0 = random_simplex(&mut rng, q, 0.05);
            let a1 = random_simplex(&mut rng, q, 0.05);
            let g: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
            let eta = rng.random_range(0.2..3.0);
            let anchors: Vec<(f64, &[f64])> = if case % 5 == 0 {
                vec![]
            } else {
                vec![(rng.random_range(0.0..2.0), &a1[..])]
            };
            let y = geom.mirror_step(&y0, &g, eta, &anchors, &reg).unwrap();
            let f = |v: &[f64]| step_objective(&geom, v, &y0, &g, eta, &anchors, &reg);
            let (_, grid_val) = grid_minimum(q, &f);
            let impl_val = f(&y);
            assert!(impl_val <= grid_val + 1e-8, "case {case}: {impl_val} vs grid {grid_val}");
            assert!(grid_val - impl_val <= 1e-8, "case {case}: grid refinement too coarse");
        }
    }

    proptest! {
        #[test]
        fn divergence_dominates_half_squared_paired_norm(
            seed in 0u64..u64::MAX, n in 2usize..8, entropy in any::<bool>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let geom = if entropy {
                BregmanGeometry::<f64>::entropy(n)
            } else {
                BregmanGeometry::<f64>::euclidean(n)
            };
            let y = random_simplex(&mut rng, n, 0.0);
            let yr = random_simplex(&mut rng, n, 1e-3);
            let diff: Vec<f64> = y.iter().zip(&yr).map(|(a, b)| a - b).collect();
            let lower = 0.5 * geom.paired_norm(&diff).powi(2);
            prop_assert!(geom.divergence(&y, &yr).unwrap() >= lower - 1e-12);
            prop_assert_eq!(geom.divergence(&yr, &yr).unwrap(), 0.0);
        }

        #[test]
        fn mirror_outputs_are_floored_simplex_points(
            seed in 0u64..u64::MAX, n in 1usize..12, eta in 1e-3f64..1e3, entropy in any::<bool>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let geom = if entropy {
                BregmanGeometry::<f64>::entropy(n)
            } else {
                BregmanGeometry::<f64>::euclidean(n)
            };
            let y0 = random_simplex(&mut rng, n, 1e-6);
            let anchor = random_simplex(&mut rng, n, 1e-6);
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let y = geom.mirror_step(&y0, &g, eta, &[(0.5, &anchor[..])], &DualRegularizer::SimplexIndicator).unwrap();
            prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(y.iter().all(|&v| v >= geom.floor()));
        }

        #[test]
        fn projection_is_idempotent(x in proptest::collection::vec(-10.0f64..10.0, 3), r in 0.1f64..5.0) {
            for c in [
                PrimalConstraint::ball(r),
                PrimalConstraint::boxed(vec![-1.0, 0.0, -2.0], vec![1.0, 0.5, 3.0]),
                PrimalConstraint::Free,
            ] {
                let p = c.project(&x);
                prop_assert_eq!(c.project(&p), p.clone());
                prop_assert!(c.contains(&p, 1e-12));
            }
        }

        #[test]
        fn prox_step_normal_cone_residual(
            seed in 0u64..u64::MAX, eta in 0.01f64..10.0, gamma in 0.01f64..10.0, r in 0.05f64..2.0
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = || (0..3).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
            let (xj, g, xb) = (v(), v(), v());
            for c in [PrimalConstraint::ball(r), PrimalConstraint::boxed(vec![-r; 3], vec![r; 3])] {
                let xp = primal_prox_step(&c, &xj, &g, eta, gamma, &xb).unwrap();
                // gradient of the smooth part at x⁺ lies in the normal cone:
                // x⁺ = Π(x⁺ − s ∇) for any s > 0
                let grad: Vec<f64> = (0..3)
                    .map(|i| g[i] + (xp[i] - xj[i]) / eta + (xp[i] - xb[i]) / gamma)
                    .collect();
                let s = 1.0 / (1.0 / eta + 1.0 / gamma);
                let moved: Vec<f64> = (0..3).map(|i| xp[i] - s * grad[i]).collect();
                let back = c.project(&moved);
                prop_assert!(dist2(&back, &xp) <= 1e-10);
            }
        }
    }
}
