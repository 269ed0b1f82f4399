//! Constraint sets of every order and their classification: Frobenius
//! integrability of Pfaffian systems, velocity rank and the homogeneity
//! (direction-only) property.

use std::sync::Arc;

use crate::kernel::{self, DerivativeBundle, Field, Point, Slot};
use crate::{Error, Matrix, Result, Vector};

/// Default absolute tolerance for "the state lies on the constraint manifold".
pub const DEFAULT_DRIFT_TOLERANCE: f64 = 1e-8;
/// Singular values below this fraction of the largest count as zero.
pub const RANK_THRESHOLD: f64 = 1e-10;
/// Absolute tolerance on the components of `dω_a ∧ ω_1 ∧ … ∧ ω_m`.
pub const FROBENIUS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    /// `F(q, t) = 0`.
    Holonomic,
    /// `F(q, v, t) = ω(q, t)·v = 0`, homogeneous linear in velocities.
    LinearPfaffian,
    /// General `F(q, v, t) = 0`.
    NonlinearFirstOrder,
    /// `F(q, v, a, t) = A(q, t)·a + b(q, v, t) = 0`.
    SecondOrder,
}

impl ConstraintKind {
    pub fn is_first_order(self) -> bool {
        matches!(self, ConstraintKind::LinearPfaffian | ConstraintKind::NonlinearFirstOrder)
    }
}

/// `m` constraint functions on an `n`-dimensional configuration space.
#[derive(Clone)]
pub struct ConstraintSet {
    kind: ConstraintKind,
    dim: usize,
    field: Arc<dyn Field>,
    drift_tolerance: f64,
    acceleration_free: bool,
    zero_accel: Vec<f64>,
}

impl std::fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("count", &self.count())
            .finish()
    }
}

/// One component of a wedge product: increasing index tuple and value.
pub type WedgeComponent = (Vec<usize>, f64);

/// Summary of [`ConstraintSet::classify`] over a set of sample states.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    /// Smallest velocity rank seen over the samples.
    pub velocity_rank: usize,
    /// Frobenius integrability; `None` unless the set is linear Pfaffian.
    pub integrable: Option<bool>,
    /// All homogeneity defects vanish: the constraints restrict only the
    /// direction of the velocity, never its magnitude.
    pub direction_only: bool,
    /// Largest `|v·∂F/∂v|` seen over the samples.
    pub homogeneity_defect: f64,
}

/// Deterministic probe points in `[-1, 1]` used for structural checks at
/// construction time.
fn probe(k: usize, i: usize, salt: f64) -> f64 {
    (1.618_033_988_75 * (k as f64 + 1.0) + 0.754_877_666 * (i as f64 + 1.0) + salt).sin() * 0.9
}

const PROBES: usize = 12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

impl ConstraintSet {
    /// Build a constraint set and check its structure at probe points:
    /// `m < n`, holonomic functions ignore velocities, Pfaffian functions are
    /// linear in velocities, second-order functions are affine in
    /// accelerations with a velocity-independent coefficient.
    pub fn new(kind: ConstraintKind, dim: usize, field: Arc<dyn Field>) -> Result<Self> {
        let m = field.outputs();
        if m == 0 || m >= dim {
            return Err(Error::InvalidConstraint(format!(
                "need 0 < m < n, got m = {m} constraints on n = {dim} coordinates"
            )));
        }
        let mut cs = ConstraintSet {
            kind,
            dim,
            field,
            drift_tolerance: DEFAULT_DRIFT_TOLERANCE,
            acceleration_free: false,
            zero_accel: vec![0.0; dim],
        };
        cs.check_structure()?;
        Ok(cs)
    }

    pub fn with_drift_tolerance(mut self, tol: f64) -> Self {
        self.drift_tolerance = tol;
        self
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of constraints `m`.
    pub fn count(&self) -> usize {
        self.field.outputs()
    }

    pub fn field(&self) -> &Arc<dyn Field> {
        &self.field
    }

    pub fn drift_tolerance(&self) -> f64 {
        self.drift_tolerance
    }

    /// True for a second-order set none of whose rows depends on accelerations.
    pub fn is_acceleration_free(&self) -> bool {
        self.acceleration_free
    }

    fn raw(&self, q: &[f64], v: &[f64], a: &[f64], t: f64) -> Option<Vec<f64>> {
        let vals = kernel::values(&*self.field, &Point::new(q, v, t).with_accel(a)).ok()?;
        Some(vals.iter().copied().collect())
    }

    fn check_structure(&mut self) -> Result<()> {
        let n = self.dim;
        let m = self.count();
        let zeros = vec![0.0; n];
        let bad = |what: &str| Err(Error::InvalidConstraint(what.to_string()));
        let mut accel_rows = vec![false; m];
        for k in 0..PROBES {
            let q: Vec<f64> = (0..n).map(|i| probe(k, i, 0.1)).collect();
            let v1: Vec<f64> = (0..n).map(|i| probe(k, i, 1.7)).collect();
            let v2: Vec<f64> = (0..n).map(|i| probe(k, i, 2.9)).collect();
            let a1: Vec<f64> = (0..n).map(|i| probe(k, i, 4.3)).collect();
            let a2: Vec<f64> = (0..n).map(|i| probe(k, i, 5.1)).collect();
            let t = probe(k, n, 0.5);
            match self.kind {
                ConstraintKind::Holonomic => {
                    if let (Some(f1), Some(f2)) = (self.raw(&q, &v1, &[], t), self.raw(&q, &v2, &[], t)) {
                        if f1.iter().zip(&f2).any(|(x, y)| !close(*x, *y)) {
                            return bad("holonomic constraints must not depend on velocities");
                        }
                    }
                }
                ConstraintKind::LinearPfaffian => {
                    let vs: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| x + 2.5 * y).collect();
                    if let (Some(f0), Some(f1), Some(f2), Some(fs)) = (
                        self.raw(&q, &zeros, &[], t),
                        self.raw(&q, &v1, &[], t),
                        self.raw(&q, &v2, &[], t),
                        self.raw(&q, &vs, &[], t),
                    ) {
                        if f0.iter().any(|x| !close(*x, 0.0)) {
                            return bad("Pfaffian constraints must vanish at zero velocity (affine Pfaffian constraints are not supported)");
                        }
                        if (0..m).any(|r| !close(fs[r], f1[r] + 2.5 * f2[r])) {
                            return bad("Pfaffian constraints must be linear in velocities");
                        }
                    }
                }
                ConstraintKind::NonlinearFirstOrder => {}
                ConstraintKind::SecondOrder => {
                    let asum: Vec<f64> = a1.iter().zip(&a2).map(|(x, y)| x + y).collect();
                    if let (Some(f0), Some(f1), Some(f2), Some(fs)) = (
                        self.raw(&q, &v1, &zeros, t),
                        self.raw(&q, &v1, &a1, t),
                        self.raw(&q, &v1, &a2, t),
                        self.raw(&q, &v1, &asum, t),
                    ) {
                        if (0..m).any(|r| !close(fs[r] + f0[r], f1[r] + f2[r])) {
                            return bad("second-order constraints must be affine in accelerations");
                        }
                        for r in 0..m {
                            accel_rows[r] |= !close(f1[r], f0[r]);
                        }
                        let g0 = self.raw(&q, &v2, &zeros, t);
                        let g1 = self.raw(&q, &v2, &a1, t);
                        if let (Some(g0), Some(g1)) = (g0, g1) {
                            if (0..m).any(|r| !close(g1[r] - g0[r], f1[r] - f0[r])) {
                                return bad("the acceleration coefficient of second-order constraints must not depend on velocities");
                            }
                        }
                    }
                }
            }
        }
        if self.kind == ConstraintKind::SecondOrder {
            let with_accel = accel_rows.iter().filter(|x| **x).count();
            if with_accel != 0 && with_accel != m {
                return bad("second-order sets must either all depend on accelerations or none of them");
            }
            self.acceleration_free = with_accel == 0;
        }
        Ok(())
    }

    fn point<'a>(&self, q: &'a [f64], v: &'a [f64], a: Option<&'a [f64]>, t: f64) -> Result<Point<'a>> {
        if q.len() != self.dim || v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "state ({}, {}) for constraints on {} coordinates",
                q.len(),
                v.len(),
                self.dim
            )));
        }
        let a = match (self.kind, a) {
            (ConstraintKind::SecondOrder, None) => return Err(Error::MissingAcceleration),
            (ConstraintKind::SecondOrder, Some(a)) if a.len() != self.dim => {
                return Err(Error::Dimension(format!("acceleration of length {}", a.len())))
            }
            (ConstraintKind::SecondOrder, Some(a)) => a,
            _ => &[],
        };
        Ok(Point::new(q, v, t).with_accel(a))
    }

    /// Like [`Self::point`] but lets acceleration-free second-order sets
    /// stand in for first-order ones.
    fn velocity_point<'a>(&'a self, q: &'a [f64], v: &'a [f64], t: f64) -> Result<Point<'a>> {
        if self.kind == ConstraintKind::SecondOrder && self.acceleration_free {
            self.point(q, v, Some(&self.zero_accel), t)
        } else {
            self.point(q, v, None, t)
        }
    }

    /// Zero acceleration of the right length.
    pub(crate) fn zero_accel(&self) -> &[f64] {
        &self.zero_accel
    }

    /// Residuals at velocity level; acceleration-free second-order sets are
    /// evaluated at zero acceleration.
    pub(crate) fn evaluate_velocity(&self, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
        kernel::values(&*self.field, &self.velocity_point(q, v, t)?)
    }

    /// Constraint residuals `F_a`.
    pub fn evaluate(&self, q: &[f64], v: &[f64], a: Option<&[f64]>, t: f64) -> Result<Vector> {
        let p = self.point(q, v, a, t)?;
        kernel::values(&*self.field, &p)
    }

    pub fn max_residual(&self, q: &[f64], v: &[f64], a: Option<&[f64]>, t: f64) -> Result<f64> {
        Ok(self.evaluate(q, v, a, t)?.amax())
    }

    pub fn on_manifold(&self, q: &[f64], v: &[f64], a: Option<&[f64]>, t: f64) -> Result<bool> {
        Ok(self.max_residual(q, v, a, t)? < self.drift_tolerance)
    }

    pub(crate) fn require_on_manifold(&self, q: &[f64], v: &[f64], t: f64) -> Result<()> {
        let residual = self.evaluate_velocity(q, v, t)?.amax();
        if residual < self.drift_tolerance {
            Ok(())
        } else {
            Err(Error::OffManifold { residual })
        }
    }

    /// `∂F/∂v` (`m × n`).
    pub fn velocity_jacobian(&self, q: &[f64], v: &[f64], t: f64) -> Result<Matrix> {
        kernel::jacobian(&*self.field, &self.velocity_point(q, v, t)?, Slot::V(0))
    }

    /// `∂F/∂q` (`m × n`).
    pub fn position_jacobian(&self, q: &[f64], v: &[f64], t: f64) -> Result<Matrix> {
        kernel::jacobian(&*self.field, &self.velocity_point(q, v, t)?, Slot::Q(0))
    }

    /// Derivative bundles of every constraint function at `(q, v, t)`.
    pub fn bundles(&self, q: &[f64], v: &[f64], t: f64) -> Result<Vec<DerivativeBundle>> {
        kernel::differentiate_field(&*self.field, &self.velocity_point(q, v, t)?)
    }

    /// Pfaffian coefficients `ω_ai(q, t)`.
    pub fn pfaffian_forms(&self, q: &[f64], t: f64) -> Result<Matrix> {
        self.require_kind(&[ConstraintKind::LinearPfaffian])?;
        let zeros = vec![0.0; self.dim];
        self.velocity_jacobian(q, &zeros, t)
    }

    fn require_kind(&self, kinds: &[ConstraintKind]) -> Result<()> {
        if kinds.contains(&self.kind) {
            Ok(())
        } else {
            Err(Error::InvalidConstraint(format!(
                "operation needs one of {kinds:?}, constraint set is {:?}",
                self.kind
            )))
        }
    }

    /// Exterior derivatives of the Pfaffian forms at `q`, in the convention
    /// `D_a[(i, j)] = ∂ω_ai/∂qʲ − ∂ω_aj/∂qⁱ`.
    pub fn form_derivatives(&self, q: &[f64], t: f64) -> Result<Vec<Matrix>> {
        self.require_kind(&[ConstraintKind::LinearPfaffian])?;
        let zeros = vec![0.0; self.dim];
        let bundles = self.bundles(q, &zeros, t)?;
        // hess_vq[(i, j)] = ∂²F/∂vⁱ∂qʲ = ∂ω_i/∂qʲ
        Ok(bundles.iter().map(|b| &b.hess_vq - b.hess_vq.transpose()).collect())
    }

    /// Every independent component of `dω_a ∧ ω_1 ∧ … ∧ ω_m` at `q`, for
    /// each `a`, keyed by the increasing index tuple.
    pub fn frobenius_components(&self, q: &[f64], t: f64) -> Result<Vec<Vec<WedgeComponent>>> {
        let omega = self.pfaffian_forms(q, t)?;
        let d = self.form_derivatives(q, t)?;
        let m = self.count();
        let k = m + 2;
        let subsets = combinations(self.dim, k);
        let perms = permutations(k);
        Ok(d
            .iter()
            .map(|da| {
                subsets
                    .iter()
                    .map(|idx| {
                        let mut sum = 0.0;
                        for (perm, sign) in &perms {
                            let mut term = 0.5 * da[(idx[perm[0]], idx[perm[1]])];
                            for b in 0..m {
                                term *= omega[(b, idx[perm[2 + b]])];
                            }
                            sum += sign * term;
                        }
                        (idx.clone(), sum)
                    })
                    .collect()
            })
            .collect())
    }

    /// Pointwise Frobenius test at every sample; `false` marks a sample where
    /// some component of `dω_a ∧ ω_1 ∧ … ∧ ω_m` is nonzero. Vacuously true
    /// when `m + 2 > n`.
    pub fn frobenius_integrable(&self, samples: &[Vector], t: f64) -> Result<Vec<bool>> {
        self.require_kind(&[ConstraintKind::LinearPfaffian])?;
        samples
            .iter()
            .map(|q| {
                if self.count() + 2 > self.dim {
                    return Ok(true);
                }
                let comps = self.frobenius_components(q.as_slice(), t)?;
                Ok(comps
                    .iter()
                    .flatten()
                    .all(|(_, c)| c.abs() <= FROBENIUS_TOLERANCE))
            })
            .collect()
    }

    /// `v·∂F_a/∂v` per constraint. Requires `(q, v)` on the manifold.
    pub fn homogeneity_defect(&self, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
        self.require_kind(&[ConstraintKind::LinearPfaffian, ConstraintKind::NonlinearFirstOrder])?;
        self.require_on_manifold(q, v, t)?;
        Ok(self.velocity_jacobian(q, v, t)? * Vector::from_column_slice(v))
    }

    /// Numerical rank of `∂F/∂v`.
    pub fn velocity_rank(&self, q: &[f64], v: &[f64], t: f64) -> Result<usize> {
        self.require_kind(&[ConstraintKind::LinearPfaffian, ConstraintKind::NonlinearFirstOrder])?;
        Ok(numerical_rank(&self.velocity_jacobian(q, v, t)?))
    }

    /// Classify over sample states `(q, v)`, all of which must lie on the
    /// manifold.
    pub fn classify(&self, samples: &[(Vector, Vector)], t: f64) -> Result<ClassificationReport> {
        self.require_kind(&[ConstraintKind::LinearPfaffian, ConstraintKind::NonlinearFirstOrder])?;
        let mut rank = usize::MAX;
        let mut defect: f64 = 0.0;
        for (q, v) in samples {
            rank = rank.min(self.velocity_rank(q.as_slice(), v.as_slice(), t)?);
            defect = defect.max(self.homogeneity_defect(q.as_slice(), v.as_slice(), t)?.amax());
        }
        let integrable = if self.kind == ConstraintKind::LinearPfaffian {
            let qs: Vec<Vector> = samples.iter().map(|(q, _)| q.clone()).collect();
            Some(self.frobenius_integrable(&qs, t)?.iter().all(|x| *x))
        } else {
            None
        };
        Ok(ClassificationReport {
            velocity_rank: if samples.is_empty() { 0 } else { rank },
            integrable,
            direction_only: defect < self.drift_tolerance,
            homogeneity_defect: defect,
        })
    }
}

pub(crate) fn numerical_rank(m: &Matrix) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_THRESHOLD * max).count()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// All permutations of `0..k` with their signs.
fn permutations(k: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<(Vec<usize>, f64)>) {
        if cur.len() == used.len() {
            let mut inversions = 0;
            for i in 0..cur.len() {
                for j in i + 1..cur.len() {
                    if cur[i] > cur[j] {
                        inversions += 1;
                    }
                }
            }
            out.push((cur.clone(), if inversions % 2 == 0 { 1.0 } else { -1.0 }));
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}
