//! Unconstrained mechanical systems: Legendre transform, energy, regularity
//! and the Euler-Lagrange accelerations with non-variational forces.

use std::sync::Arc;

use crate::kernel::{self, DerivativeBundle, Field, Point, Slot};
use crate::{Error, Matrix, Result, Vector};

/// Relative factor in the regularity test `|det H| > factor·‖H‖ⁿ`.
pub const DEFAULT_REGULARITY_FACTOR: f64 = 1e-12;

/// A Lagrangian `L(q, v, t)` with an optional dissipative covector `D(q, v, t)`.
#[derive(Clone)]
pub struct LagrangianModel {
    dim: usize,
    lagrangian: Arc<dyn Field>,
    dissipation: Option<Arc<dyn Field>>,
    labels: Vec<String>,
    regularity_factor: f64,
}

impl std::fmt::Debug for LagrangianModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LagrangianModel")
            .field("dim", &self.dim)
            .field("dissipative", &self.dissipation.is_some())
            .field("labels", &self.labels)
            .finish()
    }
}

/// Energy bookkeeping of a (possibly constrained) state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// Mechanical energy `v·∂L/∂v − L`.
    pub mechanical: f64,
    /// Power of the dissipative forces `D·v`.
    pub dissipation_power: f64,
    /// Power of the constraint reactions `R·v`.
    pub reaction_power: f64,
    /// Energy stored in the constraints (zero for unconstrained systems).
    pub constraint: f64,
    pub total: f64,
}

impl LagrangianModel {
    pub fn new(dim: usize, lagrangian: Arc<dyn Field>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("a Lagrangian model needs at least one coordinate".into()));
        }
        if lagrangian.outputs() != 1 {
            return Err(Error::Dimension(format!(
                "Lagrangian must be scalar, got {} outputs",
                lagrangian.outputs()
            )));
        }
        Ok(LagrangianModel {
            dim,
            lagrangian,
            dissipation: None,
            labels: (0..dim).map(|i| format!("q{i}")).collect(),
            regularity_factor: DEFAULT_REGULARITY_FACTOR,
        })
    }

    pub fn with_dissipation(mut self, dissipation: Arc<dyn Field>) -> Result<Self> {
        if dissipation.outputs() != self.dim {
            return Err(Error::Dimension(format!(
                "dissipative force has {} components for {} coordinates",
                dissipation.outputs(),
                self.dim
            )));
        }
        self.dissipation = Some(dissipation);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim {
            return Err(Error::Dimension(format!("{} labels for {} coordinates", labels.len(), self.dim)));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_regularity_factor(mut self, factor: f64) -> Self {
        self.regularity_factor = factor;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn lagrangian(&self) -> &Arc<dyn Field> {
        &self.lagrangian
    }

    pub fn dissipation_field(&self) -> Option<&Arc<dyn Field>> {
        self.dissipation.as_ref()
    }

    pub fn is_dissipative(&self) -> bool {
        self.dissipation.is_some()
    }

    fn check(&self, q: &[f64], v: &[f64]) -> Result<()> {
        if q.len() != self.dim || v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "state ({}, {}) for a {}-dimensional model",
                q.len(),
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn value(&self, q: &[f64], v: &[f64], t: f64) -> Result<f64> {
        self.check(q, v)?;
        Ok(kernel::values(&*self.lagrangian, &Point::new(q, v, t))?[0])
    }

    /// First and second partials of `L` at `(q, v, t)`.
    pub fn bundle(&self, q: &[f64], v: &[f64], t: f64) -> Result<DerivativeBundle> {
        self.check(q, v)?;
        kernel::differentiate(&*self.lagrangian, q, v, t)
    }

    /// Non-variational force `D(q, v, t)`; zero when absent.
    pub fn dissipation(&self, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
        match &self.dissipation {
            Some(d) => kernel::values(&**d, &Point::new(q, v, t)),
            None => Ok(Vector::zeros(self.dim)),
        }
    }

    /// Canonical momenta `p = ∂L/∂v`.
    pub fn legendre(&self, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
        self.check(q, v)?;
        let jac = kernel::jacobian(&*self.lagrangian, &Point::new(q, v, t), Slot::V(0))?;
        Ok(jac.row(0).transpose())
    }

    /// Velocity recovered from momenta by Newton iteration on `∂L/∂v = p`.
    pub fn inverse_legendre(&self, q: &[f64], p: &Vector, t: f64) -> Result<Vector> {
        let mut v = Vector::zeros(self.dim);
        for _ in 0..50 {
            let b = self.bundle(q, v.as_slice(), t)?;
            let residual = &b.grad_v - p;
            if residual.norm() <= 1e-14 * (1.0 + p.norm()) {
                return Ok(v);
            }
            let step = b
                .hess_vv
                .clone()
                .lu()
                .solve(&residual)
                .ok_or(Error::Irregular { det: 0.0 })?;
            v -= step;
        }
        Ok(v)
    }

    /// Energy function `E = v·∂L/∂v − L`.
    pub fn energy(&self, q: &[f64], v: &[f64], t: f64) -> Result<f64> {
        let p = self.legendre(q, v, t)?;
        Ok(p.dot(&Vector::from_column_slice(v)) - self.value(q, v, t)?)
    }

    /// Determinant of the velocity Hessian and whether it passes the
    /// relative regularity threshold.
    pub fn regularity(&self, q: &[f64], v: &[f64], t: f64) -> Result<(f64, bool)> {
        let b = self.bundle(q, v, t)?;
        Ok(regularity_of(&b.hess_vv, self.regularity_factor))
    }

    /// Right-hand side `∂L/∂q + D − (∂²L/∂v∂q)·v − ∂²L/∂v∂t` of
    /// `(∂²L/∂v∂v)·a = f`.
    pub fn free_force(&self, b: &DerivativeBundle, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
        let d = self.dissipation(q, v, t)?;
        let vel = Vector::from_column_slice(v);
        Ok(&b.grad_q + d - &b.hess_vq * vel - &b.hess_vt)
    }

    /// Accelerations of the unconstrained Euler-Lagrange equations with
    /// dissipation.
    pub fn unconstrained_accel(&self, q: &[f64], v: &[f64], t: f64) -> Result<Vector> {
        let b = self.bundle(q, v, t)?;
        let (det, regular) = regularity_of(&b.hess_vv, self.regularity_factor);
        if !regular {
            return Err(Error::Irregular { det });
        }
        let f = self.free_force(&b, q, v, t)?;
        b.hess_vv.lu().solve(&f).ok_or(Error::Irregular { det })
    }
}

pub(crate) fn regularity_of(h: &Matrix, factor: f64) -> (f64, bool) {
    let det = h.determinant();
    let scale = h.norm();
    let regular = scale > 0.0 && det.abs() > factor * scale.powi(h.nrows() as i32);
    (det, regular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{constant, scalar_field, vector_field, DualNum};
    use crate::HD;

    fn sq(x: HD) -> HD {
        x * x
    }

    /// L = m/2 |v|² − V(q) with V(q) = q0.
    fn particle(n: usize, mass: f64) -> LagrangianModel {
        let l = scalar_field(move |x| {
            let kinetic = x.v.iter().fold(constant(0.0), |acc, vi| acc + sq(*vi)) * (0.5 * mass);
            kinetic - x.q[0]
        });
        LagrangianModel::new(n, l).unwrap()
    }

    #[test]
    fn momentum_of_quadratic_model() {
        let m = particle(2, 2.0);
        assert_eq!(m.legendre(&[0.0, 0.0], &[3.0, 0.0], 0.0).unwrap().as_slice(), &[6.0, 0.0]);
        assert_eq!(m.legendre(&[1.0, 4.0], &[0.0, 0.0], 0.0).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn momentum_with_gauge_term() {
        let l = scalar_field(|x| sq(x.v[0]) * 0.5 + x.q[0] * x.v[0]);
        let m = LagrangianModel::new(1, l).unwrap();
        assert_eq!(m.legendre(&[1.0], &[2.0], 0.0).unwrap()[0], 3.0);
    }

    #[test]
    fn energy_examples() {
        let l = scalar_field(|x| sq(x.v[0]) * 0.5 - 5.0);
        let m = LagrangianModel::new(1, l).unwrap();
        assert_eq!(m.energy(&[0.0], &[2.0], 0.0).unwrap(), 7.0);

        // Homogeneous of degree one in v.
        let l = scalar_field(|x| (sq(x.v[0]) + sq(x.v[1])).sqrt());
        let m = LagrangianModel::new(2, l).unwrap();
        assert!(m.energy(&[0.0, 0.0], &[0.3, -1.2], 0.0).unwrap().abs() < 1e-15);

        let m = particle(2, 1.0);
        assert_eq!(m.energy(&[1.0, 0.0], &[1.0, 1.0], 0.0).unwrap(), 2.0);
    }

    #[test]
    fn regularity_examples() {
        let l = scalar_field(|x| (sq(x.v[0]) + sq(x.v[1])) * 0.5);
        let m = LagrangianModel::new(2, l).unwrap();
        assert_eq!(m.regularity(&[0.0; 2], &[0.0; 2], 0.0).unwrap(), (1.0, true));

        let l = scalar_field(|x| x.v[0]);
        let m = LagrangianModel::new(1, l).unwrap();
        assert_eq!(m.regularity(&[0.0], &[1.0], 0.0).unwrap(), (0.0, false));
        assert!(matches!(m.unconstrained_accel(&[0.0], &[1.0], 0.0), Err(Error::Irregular { .. })));

        let m = particle(2, 3.0);
        let (det, regular) = m.regularity(&[0.0; 2], &[0.5, 0.5], 0.0).unwrap();
        assert!((det - 9.0).abs() < 1e-12 && regular);
    }

    #[test]
    fn accelerations() {
        let free = LagrangianModel::new(1, scalar_field(|x| sq(x.v[0]) * 0.5)).unwrap();
        assert_eq!(free.unconstrained_accel(&[3.0], &[1.0], 0.0).unwrap()[0], 0.0);

        let falling = LagrangianModel::new(1, scalar_field(|x| sq(x.v[0]) * 0.5 - x.q[0])).unwrap();
        assert_eq!(falling.unconstrained_accel(&[3.0], &[1.0], 0.0).unwrap()[0], -1.0);

        let dragged = free.clone().with_dissipation(vector_field(1, |x, out| out[0] = -x.v[0])).unwrap();
        assert_eq!(dragged.unconstrained_accel(&[0.0], &[2.0], 0.0).unwrap()[0], -2.0);
    }

    #[test]
    fn explicit_time_dependence_enters_the_acceleration() {
        // L = ½ (1 + t) v²: d/dt((1+t) v) = 0 ⇒ a = −v / (1 + t)
        let l = scalar_field(|x| (x.t + 1.0) * sq(x.v[0]) * 0.5);
        let m = LagrangianModel::new(1, l).unwrap();
        let a = m.unconstrained_accel(&[0.0], &[2.0], 1.0).unwrap()[0];
        assert!((a + 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_legendre_round_trip() {
        let l = scalar_field(|x| {
            (sq(x.v[0]) * 2.0 + x.v[0] * x.v[1] + sq(x.v[1])) * 0.5 + x.q[0] * x.v[1]
        });
        let m = LagrangianModel::new(2, l).unwrap();
        let (q, v) = ([0.4, -0.2], [1.5, -0.7]);
        let p = m.legendre(&q, &v, 0.0).unwrap();
        let back = m.inverse_legendre(&q, &p, 0.0).unwrap();
        assert!((back - Vector::from_column_slice(&v)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(LagrangianModel::new(0, scalar_field(|_| constant(0.0))).is_err());
        assert!(LagrangianModel::new(2, vector_field(2, |_, _| {})).is_err());
        let m = particle(2, 1.0);
        assert!(m.clone().with_dissipation(vector_field(1, |_, _| {})).is_err());
        assert!(m.energy(&[0.0], &[0.0, 0.0], 0.0).is_err());
    }
}
