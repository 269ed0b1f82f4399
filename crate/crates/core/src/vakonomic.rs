//! Variational (vakonomic) dynamics. The multipliers are part of the state
//! and the reactions follow from the Euler-Lagrange equations of
//! `L + λ^a F_a`.
//!
//! Second-order constraints `F = A(q, t)·a + b(q, v, t)` are handled with
//! the state `(q, v, λ, λ̇)`: the Euler-Lagrange equations with the reaction
//! `λ∂F/∂q − d/dt(λ∂F/∂v) + d²/dt²(λ∂F/∂a)` are linear in `(a, λ̈)` and are
//! solved together with `F = 0` itself.

use crate::constraints::{ConstraintKind, ConstraintSet};
use crate::dalembert::{along_motion, Stabilization};
use crate::kernel::{self, Dir, Point, Slot};
use crate::lagrangian::{EnergyReport, LagrangianModel};
use crate::{Block, Error, Matrix, Result, Vector};

/// Configuration, velocity and multipliers at time `t`. `lambda_dot` is
/// carried only by second-order runs and is empty otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub t: f64,
    pub q: Vector,
    pub v: Vector,
    pub lambda: Vector,
    pub lambda_dot: Vector,
}

impl AugmentedState {
    pub fn new(q: Vector, v: Vector, t: f64) -> Self {
        AugmentedState { t, q, v, lambda: Vector::zeros(0), lambda_dot: Vector::zeros(0) }
    }

    pub fn from_slices(q: &[f64], v: &[f64], t: f64) -> Self {
        Self::new(Vector::from_column_slice(q), Vector::from_column_slice(v), t)
    }

    pub fn with_multipliers(mut self, lambda: Vector) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_multiplier_rates(mut self, lambda_dot: Vector) -> Self {
        self.lambda_dot = lambda_dot;
        self
    }
}

/// Pieces of the first-order vakonomic reaction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionTerms {
    /// `−λ̇^a ∂F_a/∂v`, the Appell-Chetaev-like part.
    pub rate: Vector,
    /// `λ^a (∂F_a/∂q − (∂²F_a/∂v∂q)·v − ∂²F_a/∂v∂t)`; for Pfaffian sets the
    /// magnetic-like curl term.
    pub transport: Vector,
    /// `−λ^a (∂²F_a/∂v∂v)·a`.
    pub inertial: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VakonomicSolution {
    pub a: Vector,
    /// `λ̇`: solved for first-order sets, copied from the state for
    /// second-order ones.
    pub lambda_dot: Vector,
    /// `λ̈`, second-order sets only.
    pub lambda_ddot: Option<Vector>,
    pub reaction: Vector,
    pub terms: Option<ReactionTerms>,
}

#[derive(Debug, Clone)]
pub struct VakonomicSystem {
    model: LagrangianModel,
    cs: ConstraintSet,
    lambda0: Vector,
    lambda_dot0: Vector,
    stabilization: Stabilization,
}

/// Tolerance on the smallest eigenvalue of the effective mass on the
/// constraint null space, relative to its largest entry.
const EFFECTIVE_MASS_FLOOR: f64 = 1e-12;

impl VakonomicSystem {
    pub fn new(model: LagrangianModel, cs: ConstraintSet) -> Result<Self> {
        if cs.kind() == ConstraintKind::Holonomic {
            return Err(Error::InvalidConstraint(
                "holonomic constraints have a single treatment; use DalembertSystem".into(),
            ));
        }
        if cs.dim() != model.dim() {
            return Err(Error::Dimension(format!(
                "constraints on {} coordinates for a {}-dimensional model",
                cs.dim(),
                model.dim()
            )));
        }
        let m = cs.count();
        Ok(VakonomicSystem {
            model,
            cs,
            lambda0: Vector::zeros(m),
            lambda_dot0: Vector::zeros(m),
            stabilization: Stabilization::default(),
        })
    }

    pub fn with_initial_multipliers(mut self, lambda0: Vector) -> Result<Self> {
        if lambda0.len() != self.cs.count() {
            return Err(Error::Dimension(format!("{} initial multipliers for {} constraints", lambda0.len(), self.cs.count())));
        }
        self.lambda0 = lambda0;
        Ok(self)
    }

    pub fn with_initial_multiplier_rates(mut self, lambda_dot0: Vector) -> Result<Self> {
        if lambda_dot0.len() != self.cs.count() {
            return Err(Error::Dimension(format!("{} initial multiplier rates for {} constraints", lambda_dot0.len(), self.cs.count())));
        }
        self.lambda_dot0 = lambda_dot0;
        Ok(self)
    }

    pub fn with_stabilization(mut self, stabilization: Stabilization) -> Self {
        self.stabilization = stabilization;
        self
    }

    pub fn model(&self) -> &LagrangianModel {
        &self.model
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.cs
    }

    pub fn initial_multipliers(&self) -> &Vector {
        &self.lambda0
    }

    pub fn initial_multiplier_rates(&self) -> &Vector {
        &self.lambda_dot0
    }

    /// True when the state carries `λ̇` (genuinely acceleration-dependent
    /// second-order constraints).
    pub fn is_second_order(&self) -> bool {
        self.cs.kind() == ConstraintKind::SecondOrder && !self.cs.is_acceleration_free()
    }

    /// Initial state at `(q, v, t)` with the configured multipliers.
    pub fn initial_state(&self, q: &[f64], v: &[f64], t: f64) -> AugmentedState {
        let s = AugmentedState::from_slices(q, v, t).with_multipliers(self.lambda0.clone());
        if self.is_second_order() {
            s.with_multiplier_rates(self.lambda_dot0.clone())
        } else {
            s
        }
    }

    fn check_state(&self, s: &AugmentedState) -> Result<()> {
        let n = self.model.dim();
        let m = self.cs.count();
        if s.q.len() != n || s.v.len() != n || s.lambda.len() != m {
            return Err(Error::Dimension(format!(
                "state (q {}, v {}, λ {}) for n = {n}, m = {m}",
                s.q.len(),
                s.v.len(),
                s.lambda.len()
            )));
        }
        if self.is_second_order() && s.lambda_dot.len() != m {
            return Err(Error::Dimension(format!("second-order state needs {m} multiplier rates")));
        }
        Ok(())
    }

    /// Assemble with the on-manifold gate for first-order sets.
    pub fn assemble(&self, s: &AugmentedState) -> Result<VakonomicSolution> {
        self.check_state(s)?;
        if !self.is_second_order() {
            self.cs.require_on_manifold(s.q.as_slice(), s.v.as_slice(), s.t)?;
        }
        self.solve(s)
    }

    /// Dispatch on the constraint kind without the manifold gate.
    pub(crate) fn solve(&self, s: &AugmentedState) -> Result<VakonomicSolution> {
        match self.cs.kind() {
            ConstraintKind::LinearPfaffian => self.solve_linear(s),
            _ if self.is_second_order() => self.solve_second_order(s),
            _ => self.solve_nonlinear(s),
        }
    }

    /// Pfaffian sets: `M a + ωᵀλ̇ = f + λ^a(curl ω_a)·v − λ^a ∂ω_a/∂t`.
    fn solve_linear(&self, s: &AugmentedState) -> Result<VakonomicSolution> {
        let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
        let b = self.model.bundle(q, v, t)?;
        let force = self.model.free_force(&b, q, v, t)?;
        let bundles = self.cs.bundles(q, v, t)?;
        let n = q.len();
        let m = bundles.len();
        let mut omega = Matrix::zeros(m, n);
        let mut transport = Vector::zeros(n);
        let mut rhs_bot = Vector::zeros(m);
        for (a, fb) in bundles.iter().enumerate() {
            omega.row_mut(a).copy_from(&fb.grad_v.transpose());
            // hess_vq[(i, j)] = ∂ω_i/∂qʲ, so the curl is (∂_iω_j − ∂_jω_i) vʲ
            let curl = (fb.hess_vq.transpose() - &fb.hess_vq) * &s.v;
            transport += (curl - &fb.hess_vt) * s.lambda[a];
            // d/dt(ω·v) without the acceleration part: vᵀ(∂ω/∂q)v + ∂_tω·v
            let drift = s.v.dot(&(&fb.hess_vq * &s.v)) + fb.hess_vt.dot(&s.v);
            rhs_bot[a] = -drift - self.stabilization.alpha * fb.value;
        }
        let mass = b.hess_vv.clone();
        check_effective_mass(&mass, &omega)?;
        let (acc, lambda_dot) = kernel::solve_saddle(&mass, &omega, &(&force + &transport), &rhs_bot)?;
        let rate = -(omega.transpose() * &lambda_dot);
        let reaction = &rate + &transport;
        Ok(VakonomicSolution {
            a: acc,
            lambda_dot,
            lambda_ddot: None,
            reaction,
            terms: Some(ReactionTerms { rate, transport, inertial: Vector::zeros(n) }),
        })
    }

    /// General first-order sets: the effective mass picks up `λ^a ∂²F_a/∂v∂v`.
    fn solve_nonlinear(&self, s: &AugmentedState) -> Result<VakonomicSolution> {
        let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
        let b = self.model.bundle(q, v, t)?;
        let force = self.model.free_force(&b, q, v, t)?;
        let bundles = self.cs.bundles(q, v, t)?;
        let n = q.len();
        let m = bundles.len();
        let mut mass = b.hess_vv.clone();
        let mut c = Matrix::zeros(m, n);
        let mut transport = Vector::zeros(n);
        let mut rhs_bot = Vector::zeros(m);
        for (a, fb) in bundles.iter().enumerate() {
            let lam = s.lambda[a];
            mass += &fb.hess_vv * lam;
            c.row_mut(a).copy_from(&fb.grad_v.transpose());
            transport += (&fb.grad_q - &fb.hess_vq * &s.v - &fb.hess_vt) * lam;
            rhs_bot[a] = -fb.grad_q.dot(&s.v) - fb.dt_partial - self.stabilization.alpha * fb.value;
        }
        check_effective_mass(&mass, &c)?;
        let (acc, lambda_dot) = kernel::solve_saddle(&mass, &c, &(&force + &transport), &rhs_bot)?;
        let rate = -(c.transpose() * &lambda_dot);
        let mut inertial = Vector::zeros(n);
        for (a, fb) in bundles.iter().enumerate() {
            inertial -= &fb.hess_vv * &acc * s.lambda[a];
        }
        let reaction = &rate + &transport + &inertial;
        Ok(VakonomicSolution {
            a: acc,
            lambda_dot,
            lambda_ddot: None,
            reaction,
            terms: Some(ReactionTerms { rate, transport, inertial }),
        })
    }

    fn solve_second_order(&self, s: &AugmentedState) -> Result<VakonomicSolution> {
        let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
        let b = self.model.bundle(q, v, t)?;
        let force = self.model.free_force(&b, q, v, t)?;
        let parts = SecondOrderParts::at(&self.cs, q, v, t)?;
        let n = q.len();
        let m = self.cs.count();

        let mut k = b.hess_vv.clone();
        let mut rest = Vector::zeros(n);
        for a in 0..m {
            let (lam, lam_dot) = (s.lambda[a], s.lambda_dot[a]);
            k += (&parts.b_vv[a] - &parts.a_q[a] - parts.a_q[a].transpose()) * lam;
            rest += parts.b_q.row(a).transpose() * lam;
            rest -= parts.b_v.row(a).transpose() * lam_dot;
            rest -= parts.b_v_dot.row(a).transpose() * lam;
            rest += parts.a_dot.row(a).transpose() * (2.0 * lam_dot);
            rest += parts.a_ddot.row(a).transpose() * lam;
        }
        check_effective_mass(&k, &parts.a)?;
        let rhs_bot = -&parts.b;
        let (acc, y) = kernel::solve_saddle(&k, &parts.a, &(&force + &rest), &rhs_bot)?;
        let lambda_ddot = -y;
        let reaction = parts.reaction(s, &acc, &lambda_ddot);
        Ok(VakonomicSolution {
            a: acc,
            lambda_dot: s.lambda_dot.clone(),
            lambda_ddot: Some(lambda_ddot),
            reaction,
            terms: None,
        })
    }

    /// Energy of the constraints `E_M`. First-order sets:
    /// `λ^a v·∂F_a/∂v`; second-order sets the Ostrogradsky form
    /// `λ(B·v + A·a) − (λ̇A + λȦ)·v − λF`.
    pub fn constraint_energy(&self, s: &AugmentedState, sol: &VakonomicSolution) -> Result<f64> {
        if self.is_second_order() {
            let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
            let parts = SecondOrderParts::at(&self.cs, q, v, t)?;
            let f = &parts.a * &sol.a + &parts.b;
            let mut e = 0.0;
            for a in 0..self.cs.count() {
                let (lam, lam_dot) = (s.lambda[a], s.lambda_dot[a]);
                e += lam * parts.b_v.row(a).transpose().dot(&s.v) + lam * parts.a.row(a).transpose().dot(&sol.a)
                    - (parts.a.row(a).transpose() * lam_dot + parts.a_dot.row(a).transpose() * lam).dot(&s.v)
                    - lam * f[a];
            }
            Ok(e)
        } else {
            constraint_energy(&self.cs, &s.lambda, s.q.as_slice(), s.v.as_slice(), s.t)
        }
    }

    /// Residuals of the constraints at the solved acceleration.
    pub fn residuals(&self, s: &AugmentedState, sol: &VakonomicSolution) -> Result<Vector> {
        if self.cs.kind() == ConstraintKind::SecondOrder {
            self.cs.evaluate(s.q.as_slice(), s.v.as_slice(), Some(sol.a.as_slice()), s.t)
        } else {
            self.cs.evaluate(s.q.as_slice(), s.v.as_slice(), None, s.t)
        }
    }

    /// Energy report at a state on the manifold.
    pub fn energy_report(&self, s: &AugmentedState) -> Result<EnergyReport> {
        let sol = self.assemble(s)?;
        self.energy_report_with(s, &sol)
    }

    pub(crate) fn energy_report_with(&self, s: &AugmentedState, sol: &VakonomicSolution) -> Result<EnergyReport> {
        let (q, v, t) = (s.q.as_slice(), s.v.as_slice(), s.t);
        let mechanical = self.model.energy(q, v, t)?;
        let constraint = self.constraint_energy(s, sol)?;
        let dissipation_power = self.model.dissipation(q, v, t)?.dot(&s.v);
        Ok(EnergyReport {
            mechanical,
            dissipation_power,
            reaction_power: sol.reaction.dot(&s.v),
            constraint,
            total: mechanical + constraint,
        })
    }
}

/// Null-space basis of `c` (columns), from the SVD.
fn null_space(c: &Matrix) -> Matrix {
    let n = c.ncols();
    if c.nrows() == 0 {
        return Matrix::identity(n, n);
    }
    // Pad to square so the SVD returns a full set of right singular vectors.
    let mut padded = Matrix::zeros(n.max(c.nrows()), n);
    padded.view_mut((0, 0), (c.nrows(), n)).copy_from(c);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let max = svd.singular_values.max();
    let cols: Vec<usize> = (0..n)
        .filter(|&i| svd.singular_values[i] <= crate::constraints::RANK_THRESHOLD * max.max(f64::MIN_POSITIVE))
        .collect();
    let mut z = Matrix::zeros(n, cols.len());
    for (k, &i) in cols.iter().enumerate() {
        z.column_mut(k).copy_from(&vt.row(i).transpose());
    }
    z
}

/// The effective mass must stay positive definite on the null space of the
/// constraint rows; otherwise the multipliers have driven the inertia
/// through zero.
fn check_effective_mass(mass: &Matrix, c: &Matrix) -> Result<()> {
    let z = null_space(c);
    if z.ncols() == 0 {
        return Ok(());
    }
    let reduced = z.transpose() * mass * &z;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    if reduced.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular { block: Block::Mass, condition: f64::INFINITY });
    }
    let min_eigenvalue = reduced.clone().symmetric_eigen().eigenvalues.min();
    if min_eigenvalue <= EFFECTIVE_MASS_FLOOR * mass.amax().max(1.0) {
        return Err(Error::EffectiveMassSingular { min_eigenvalue });
    }
    Ok(())
}

/// Derivatives of `F = A(q, t)·a + b(q, v, t)` needed by the second-order
/// assembler. Rows are indexed by constraint.
struct SecondOrderParts {
    a: Matrix,
    b: Vector,
    /// `∂b/∂q`
    b_q: Matrix,
    /// `B = ∂b/∂v`
    b_v: Matrix,
    /// `∂B/∂q·v + ∂B/∂t`
    b_v_dot: Matrix,
    /// `∂²b_a/∂v∂v`
    b_vv: Vec<Matrix>,
    /// `a_q[a][(i, j)] = ∂A_aj/∂qⁱ`
    a_q: Vec<Matrix>,
    /// `Ȧ = ∂A/∂q·v + ∂A/∂t`
    a_dot: Matrix,
    /// `Ä` without its acceleration part: `vᵀ∂²A v + 2∂²A/∂q∂t·v + ∂²A/∂t²`
    a_ddot: Matrix,
}

impl SecondOrderParts {
    fn at(cs: &ConstraintSet, q: &[f64], v: &[f64], t: f64) -> Result<Self> {
        let n = q.len();
        let m = cs.count();
        let field = &**cs.field();
        let zeros = cs.zero_accel();
        let p = Point::new(q, v, t).with_accel(zeros);
        let bad = |value: f64| Error::Evaluation { value, q: q.to_vec(), v: v.to_vec(), t };

        let b = kernel::values(field, &p)?;
        let a = kernel::jacobian(field, &p, Slot::A(0))?;
        let b_q = kernel::jacobian(field, &p, Slot::Q(0))?;
        let b_v = kernel::jacobian(field, &p, Slot::V(0))?;

        let mut b_vv = vec![Matrix::zeros(n, n); m];
        let mut a_q = vec![Matrix::zeros(n, n); m];
        for i in 0..n {
            for j in 0..n {
                let out = kernel::directional(field, &p, &Dir::Unit(Slot::Q(i)), &Dir::Unit(Slot::A(j)));
                for r in 0..m {
                    a_q[r][(i, j)] = out[r].eps1eps2;
                }
                if j >= i {
                    let out = kernel::directional(field, &p, &Dir::Unit(Slot::V(i)), &Dir::Unit(Slot::V(j)));
                    for r in 0..m {
                        b_vv[r][(i, j)] = out[r].eps1eps2;
                        b_vv[r][(j, i)] = out[r].eps1eps2;
                    }
                }
            }
        }

        let mut b_v_dot = Matrix::zeros(m, n);
        for i in 0..n {
            let out = kernel::directional(field, &p, &Dir::Unit(Slot::V(i)), &along_motion(v));
            for r in 0..m {
                b_v_dot[(r, i)] = out[r].eps1eps2;
            }
        }
        let a_dot = a_dot_at(field, q, v, zeros, t);

        // One more derivative along the motion than hyper-duals carry:
        // central difference of the exact Ȧ along (q + s v, t + s).
        let h = f64::EPSILON.cbrt() * (1.0 + t.abs()).max(q.iter().fold(0.0, |acc: f64, x| acc.max(x.abs())));
        let shifted = |sign: f64| {
            let qs: Vec<f64> = q.iter().zip(v).map(|(qi, vi)| qi + sign * h * vi).collect();
            a_dot_at(field, &qs, v, zeros, t + sign * h)
        };
        let a_ddot = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);

        for x in a_q.iter().chain(&b_vv).flat_map(|m| m.iter()).chain(b_v_dot.iter()).chain(a_dot.iter()).chain(a_ddot.iter()) {
            if !x.is_finite() {
                return Err(bad(*x));
            }
        }
        Ok(SecondOrderParts { a, b, b_q, b_v, b_v_dot, b_vv, a_q, a_dot, a_ddot })
    }

    /// `R_i = λ∂F/∂qⁱ − d/dt(λ∂F/∂vⁱ) + d²/dt²(λ∂F/∂aⁱ)` expanded term by term.
    fn reaction(&self, s: &AugmentedState, acc: &Vector, lambda_ddot: &Vector) -> Vector {
        let n = s.q.len();
        let mut r = Vector::zeros(n);
        for a in 0..self.a.nrows() {
            let (lam, lam_dot, lam_ddot) = (s.lambda[a], s.lambda_dot[a], lambda_ddot[a]);
            let f_q = self.b_q.row(a).transpose() + &self.a_q[a] * acc;
            let b_dot = self.b_v_dot.row(a).transpose() + &self.b_vv[a] * acc;
            let a_ddot = self.a_ddot.row(a).transpose() + self.a_q[a].transpose() * acc;
            r += f_q * lam;
            r -= self.b_v.row(a).transpose() * lam_dot + b_dot * lam;
            r += self.a.row(a).transpose() * lam_ddot + self.a_dot.row(a).transpose() * (2.0 * lam_dot) + a_ddot * lam;
        }
        r
    }
}

fn a_dot_at(field: &dyn crate::Field, q: &[f64], v: &[f64], zeros: &[f64], t: f64) -> Matrix {
    let n = q.len();
    let m = field.outputs();
    let p = Point::new(q, v, t).with_accel(zeros);
    let mut out = Matrix::zeros(m, n);
    for i in 0..n {
        let d = kernel::directional(field, &p, &Dir::Unit(Slot::A(i)), &along_motion(v));
        for r in 0..m {
            out[(r, i)] = d[r].eps1eps2;
        }
    }
    out
}

pub fn assemble_vakonomic_linear(sys: &VakonomicSystem, s: &AugmentedState) -> Result<VakonomicSolution> {
    if sys.cs.kind() != ConstraintKind::LinearPfaffian {
        return Err(Error::InvalidConstraint("linear assembler needs a Pfaffian set".into()));
    }
    sys.check_state(s)?;
    sys.cs.require_on_manifold(s.q.as_slice(), s.v.as_slice(), s.t)?;
    sys.solve_linear(s)
}

/// General first-order assembler; also accepts Pfaffian sets, which it
/// treats through second derivatives rather than the explicit curl.
pub fn assemble_vakonomic_nonlinear(sys: &VakonomicSystem, s: &AugmentedState) -> Result<VakonomicSolution> {
    if sys.is_second_order() {
        return Err(Error::InvalidConstraint("acceleration-dependent constraints need the second-order assembler".into()));
    }
    sys.check_state(s)?;
    sys.cs.require_on_manifold(s.q.as_slice(), s.v.as_slice(), s.t)?;
    sys.solve_nonlinear(s)
}

/// Second-order assembler. Acceleration-free second-order sets reduce to
/// the first-order one.
pub fn assemble_vakonomic_second_order(sys: &VakonomicSystem, s: &AugmentedState) -> Result<VakonomicSolution> {
    if sys.cs.kind() != ConstraintKind::SecondOrder {
        return Err(Error::InvalidConstraint("second-order assembler needs a second-order set".into()));
    }
    sys.assemble(s)
}

/// `E_M = λ^a v·∂F_a/∂v` for first-order sets.
pub fn constraint_energy(cs: &ConstraintSet, lambda: &Vector, q: &[f64], v: &[f64], t: f64) -> Result<f64> {
    if cs.kind() == ConstraintKind::SecondOrder && !cs.is_acceleration_free() {
        return Err(Error::InvalidConstraint("constraint energy of second-order sets needs the solved state".into()));
    }
    let j = cs.velocity_jacobian(q, v, t)?;
    Ok(lambda.dot(&(j * Vector::from_column_slice(v))))
}

/// `E_L + E_M` with the reaction power, at a state on the manifold.
pub fn total_energy(sys: &VakonomicSystem, s: &AugmentedState) -> Result<EnergyReport> {
    sys.energy_report(s)
}
