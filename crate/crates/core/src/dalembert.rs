//! d'Alembert / Appell-Chetaev dynamics: multipliers are solved
//! instantaneously and reactions lie along `∂F/∂v` (first-order kinds) or
//! `∂F/∂q` (holonomic). Also the penalty-potential realization of holonomic
//! constraints.

use std::sync::Arc;

use crate::constraints::{ConstraintKind, ConstraintSet};
use crate::kernel::{self, Args, Dir, Field, Point, HD};
use crate::lagrangian::LagrangianModel;
use crate::{Error, Matrix, Result, Vector};

/// Baumgarte feedback on the differentiated constraints. First-order kinds
/// use `Ḟ = −αF`; holonomic constraints use `F̈ = −αḞ − βF`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stabilization {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Stabilization {
    fn default() -> Self {
        Stabilization { alpha: 20.0, beta: 100.0 }
    }
}

impl Stabilization {
    pub const NONE: Stabilization = Stabilization { alpha: 0.0, beta: 0.0 };
}

#[derive(Debug, Clone)]
pub struct DalembertSystem {
    model: LagrangianModel,
    cs: ConstraintSet,
    stabilization: Stabilization,
}

/// Accelerations, instantaneous multipliers and reactions `R = λ·C`.
#[derive(Debug, Clone, PartialEq)]
pub struct DalembertSolution {
    pub a: Vector,
    pub lambda: Vector,
    pub reaction: Vector,
}

/// Seed along the motion `(q̇, ṫ) = (v, 1)`.
pub(crate) fn along_motion(v: &[f64]) -> Dir<'_> {
    Dir::Along { q: v, v: &[], a: &[], t: 1.0 }
}

impl DalembertSystem {
    pub fn new(model: LagrangianModel, cs: ConstraintSet) -> Result<Self> {
        if cs.kind() == ConstraintKind::SecondOrder {
            return Err(Error::InvalidConstraint(
                "second-order constraints only have a vakonomic treatment".into(),
            ));
        }
        if cs.dim() != model.dim() {
            return Err(Error::Dimension(format!(
                "constraints on {} coordinates for a {}-dimensional model",
                cs.dim(),
                model.dim()
            )));
        }
        Ok(DalembertSystem { model, cs, stabilization: Stabilization::default() })
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

    pub fn stabilization(&self) -> Stabilization {
        self.stabilization
    }

    /// Solve the saddle system at `(q, v, t)`, which must lie on the
    /// constraint manifold.
    pub fn assemble(&self, q: &[f64], v: &[f64], t: f64) -> Result<DalembertSolution> {
        self.cs.require_on_manifold(q, v, t)?;
        if self.cs.kind() == ConstraintKind::Holonomic {
            // A holonomic state also has to be tangent: Ḟ = F_q·v + F_t = 0.
            let c = self.cs.position_jacobian(q, v, t)?;
            let fdot = &c * Vector::from_column_slice(v) + self.time_partial(q, v, t)?;
            if fdot.amax() >= self.cs.drift_tolerance() {
                return Err(Error::OffManifold { residual: fdot.amax() });
            }
        }
        self.solve(q, v, t)
    }

    fn time_partial(&self, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
        kernel::jacobian(&**self.cs.field(), &Point::new(q, v, t), kernel::Slot::T).map(|j| j.column(0).into_owned())
    }

    /// Saddle solve without the on-manifold gate; used inside integrator
    /// stages where the state is only approximately constrained.
    pub(crate) fn solve(&self, q: &[f64], v: &[f64], t: f64) -> Result<DalembertSolution> {
        let b = self.model.bundle(q, v, t)?;
        let force = self.model.free_force(&b, q, v, t)?;
        let p = Point::new(q, v, t);
        let field = &**self.cs.field();
        let seeded = kernel::directional(field, &p, &along_motion(v), &along_motion(v));
        let Stabilization { alpha, beta } = self.stabilization;

        let (c, rhs) = match self.cs.kind() {
            ConstraintKind::Holonomic => {
                let c = kernel::jacobian(field, &p, kernel::Slot::Q(0))?;
                // eps1 = Ḟ, eps1eps2 = vᵀF_qq v + 2F_qt·v + F_tt
                let rhs = Vector::from_iterator(
                    seeded.len(),
                    seeded.iter().map(|x| -x.eps1eps2 - alpha * x.eps1 - beta * x.re),
                );
                (c, rhs)
            }
            _ => {
                let c = kernel::jacobian(field, &p, kernel::Slot::V(0))?;
                // eps1 = F_q·v + F_t
                let rhs = Vector::from_iterator(seeded.len(), seeded.iter().map(|x| -x.eps1 - alpha * x.re));
                (c, rhs)
            }
        };
        if rhs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation { value: f64::NAN, q: q.to_vec(), v: v.to_vec(), t });
        }
        let (a, y) = kernel::solve_saddle(&b.hess_vv, &c, &force, &rhs)?;
        let lambda = -y;
        let reaction = c.transpose() * &lambda;
        Ok(DalembertSolution { a, lambda, reaction })
    }
}

/// Module-level entry point mirroring [`DalembertSystem::assemble`].
pub fn assemble_dalembert(sys: &DalembertSystem, q: &[f64], v: &[f64], t: f64) -> Result<DalembertSolution> {
    sys.assemble(q, v, t)
}

/// Power `R·v` of a reaction covector.
pub fn reaction_power(reaction: &Vector, v: &[f64]) -> f64 {
    reaction.dot(&Vector::from_column_slice(v))
}

/// Holonomic constraints realized by the stiff potential
/// `U_κ = ½ κ^{ab} F_a F_b` added to the base potential.
#[derive(Debug, Clone)]
pub struct PenaltyRealization {
    base: LagrangianModel,
    cs: ConstraintSet,
    kappa: Matrix,
    penalized: LagrangianModel,
}

struct PenalizedLagrangian {
    base: Arc<dyn Field>,
    constraints: Arc<dyn Field>,
    kappa: Matrix,
}

impl Field for PenalizedLagrangian {
    fn outputs(&self) -> usize {
        1
    }

    fn eval(&self, x: &Args<'_>, out: &mut [HD]) {
        let mut l = [kernel::constant(0.0)];
        self.base.eval(x, &mut l);
        let mut f = vec![kernel::constant(0.0); self.constraints.outputs()];
        self.constraints.eval(x, &mut f);
        let mut u = kernel::constant(0.0);
        for a in 0..f.len() {
            for b in 0..f.len() {
                u += f[a] * f[b] * (0.5 * self.kappa[(a, b)]);
            }
        }
        out[0] = l[0] - u;
    }
}

impl PenaltyRealization {
    pub fn new(base: LagrangianModel, cs: ConstraintSet, kappa: Matrix) -> Result<Self> {
        if cs.kind() != ConstraintKind::Holonomic {
            return Err(Error::InvalidConstraint("penalty realization needs holonomic constraints".into()));
        }
        let m = cs.count();
        if kappa.shape() != (m, m) {
            return Err(Error::Dimension(format!("κ is {:?} for {m} constraints", kappa.shape())));
        }
        if (&kappa - kappa.transpose()).amax() > 1e-12 * kappa.amax() {
            return Err(Error::Config("κ must be symmetric".into()));
        }
        let min_eigenvalue = kappa.clone().symmetric_eigen().eigenvalues.min();
        if !(min_eigenvalue > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue });
        }
        let field: Arc<dyn Field> = Arc::new(PenalizedLagrangian {
            base: base.lagrangian().clone(),
            constraints: cs.field().clone(),
            kappa: kappa.clone(),
        });
        let mut penalized = LagrangianModel::new(base.dim(), field)?.with_labels(base.labels().to_vec())?;
        if let Some(d) = base.dissipation_field() {
            penalized = penalized.with_dissipation(d.clone())?;
        }
        Ok(PenaltyRealization { base, cs, kappa, penalized })
    }

    /// Isotropic coefficient `κ·I`.
    pub fn isotropic(base: LagrangianModel, cs: ConstraintSet, kappa: f64) -> Result<Self> {
        let m = cs.count();
        Self::new(base, cs, Matrix::identity(m, m) * kappa)
    }

    pub fn base(&self) -> &LagrangianModel {
        &self.base
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.cs
    }

    pub fn kappa(&self) -> &Matrix {
        &self.kappa
    }

    /// The model with `U_κ` folded into its Lagrangian.
    pub fn penalized_model(&self) -> &LagrangianModel {
        &self.penalized
    }

    pub fn accel(&self, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
        self.penalized.unconstrained_accel(q, v, t)
    }
}

pub fn penalty_accel(pr: &PenaltyRealization, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
    pr.accel(q, v, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{constant, scalar_field, vector_field};

    fn particle(n: usize, potential: impl Fn(&Args<'_>) -> HD + Send + Sync + 'static) -> LagrangianModel {
        let l = scalar_field(move |x| {
            let k = x.v.iter().fold(constant(0.0), |acc, vi| acc + *vi * *vi) * 0.5;
            k - potential(x)
        });
        LagrangianModel::new(n, l).unwrap()
    }

    fn speed() -> ConstraintSet {
        let f = vector_field(1, |x, out| out[0] = x.v[0] * x.v[0] + x.v[1] * x.v[1] - 1.0);
        ConstraintSet::new(ConstraintKind::NonlinearFirstOrder, 2, f).unwrap()
    }

    fn circle() -> ConstraintSet {
        let f = vector_field(1, |x, out| out[0] = x.q[0] * x.q[0] + x.q[1] * x.q[1] - 1.0);
        ConstraintSet::new(ConstraintKind::Holonomic, 2, f).unwrap()
    }

    #[test]
    fn free_speed_constrained_particle() {
        let sys = DalembertSystem::new(particle(2, |_| constant(0.0)), speed()).unwrap();
        let s = sys.assemble(&[0.0, 0.0], &[1.0, 0.0], 0.0).unwrap();
        assert!(s.a.amax() < 1e-15);
        assert!(s.lambda[0].abs() < 1e-15);
    }

    #[test]
    fn orthogonal_force_does_no_work() {
        // V = q1² at q = (0, 0.5): force (0, −1) ⟂ v
        let sys = DalembertSystem::new(particle(2, |x| x.q[1] * x.q[1]), speed()).unwrap();
        let s = sys.assemble(&[0.0, 0.5], &[1.0, 0.0], 0.0).unwrap();
        assert!(s.lambda[0].abs() < 1e-14);
        assert!((&s.a - Vector::from_vec(vec![0.0, -1.0])).norm() < 1e-14);
    }

    #[test]
    fn centripetal_multiplier_on_circle() {
        let sys = DalembertSystem::new(particle(2, |_| constant(0.0)), circle()).unwrap();
        let s = sys.assemble(&[1.0, 0.0], &[0.0, 1.0], 0.0).unwrap();
        assert!((&s.a - Vector::from_vec(vec![-1.0, 0.0])).norm() < 1e-14);
        assert!((s.lambda[0] + 0.5).abs() < 1e-14);
        // Brute-force: a = λ ∂F/∂q = λ·2q
        assert!((s.a[0] - s.lambda[0] * 2.0).abs() < 1e-14);
        assert!(reaction_power(&s.reaction, &[0.0, 1.0]).abs() < 1e-15);
    }

    #[test]
    fn speed_reaction_power_is_two_lambda() {
        // V = q0 pushes against the motion: λ ≠ 0
        let sys = DalembertSystem::new(particle(2, |x| x.q[0]), speed()).unwrap();
        let v = [0.6, 0.8];
        let s = sys.assemble(&[0.0, 0.0], &v, 0.0).unwrap();
        assert!(s.lambda[0].abs() > 0.1);
        assert!((reaction_power(&s.reaction, &v) - 2.0 * s.lambda[0]).abs() < 1e-14);
    }

    #[test]
    fn holonomic_second_derivative_holds() {
        let sys = DalembertSystem::new(particle(2, |x| x.q[1] * 9.81), circle()).unwrap();
        let (q, v) = ([0.6, -0.8], [1.6, 1.2]);
        let s = sys.assemble(&q, &v, 0.0).unwrap();
        // 2q·a + 2|v|² = 0
        let residual = 2.0 * (q[0] * s.a[0] + q[1] * s.a[1]) + 2.0 * (v[0] * v[0] + v[1] * v[1]);
        assert!(residual.abs() < 1e-12);
    }

    #[test]
    fn off_manifold_is_rejected() {
        let sys = DalembertSystem::new(particle(2, |_| constant(0.0)), speed()).unwrap();
        assert!(matches!(sys.assemble(&[0.0, 0.0], &[2.0, 0.0], 0.0), Err(Error::OffManifold { .. })));
        let sys = DalembertSystem::new(particle(2, |_| constant(0.0)), circle()).unwrap();
        assert!(matches!(sys.assemble(&[1.0, 0.0], &[1.0, 0.0], 0.0), Err(Error::OffManifold { .. })));
    }

    #[test]
    fn penalty_examples() {
        // F = q0 acts as a linear spring −κ q0 on the first coordinate.
        let wall = ConstraintSet::new(ConstraintKind::Holonomic, 2, vector_field(1, |x, out| out[0] = x.q[0])).unwrap();
        let pr = PenaltyRealization::isotropic(particle(2, |_| constant(0.0)), wall, 100.0).unwrap();
        let a = pr.accel(&[0.1, 0.0], &[0.0, 0.0], 0.0).unwrap();
        assert!((a[0] + 10.0).abs() < 1e-12);
        // On the constraint surface the penalty force vanishes.
        let a = pr.accel(&[0.0, 0.3], &[0.5, 0.0], 0.0).unwrap();
        assert_eq!(a.as_slice(), &[0.0, 0.0]);

        let bad = PenaltyRealization::isotropic(particle(2, |_| constant(0.0)), circle(), -1.0);
        assert!(matches!(bad, Err(Error::NotPositiveDefinite { .. })));
        assert!(PenaltyRealization::isotropic(particle(2, |_| constant(0.0)), speed(), 1.0).is_err());
    }
}
