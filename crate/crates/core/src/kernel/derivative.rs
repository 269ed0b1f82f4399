use super::{Args, Field, Point, HD};
use crate::{Error, Matrix, Result, Vector};

/// One coordinate of the `(q, v, a, t)` argument space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Q(usize),
    V(usize),
    A(usize),
    T,
}

/// A seed direction in argument space. Empty slices in [`Dir::Along`] mean zero.
#[derive(Debug, Clone, Copy)]
pub enum Dir<'a> {
    Zero,
    Unit(Slot),
    Along {
        q: &'a [f64],
        v: &'a [f64],
        a: &'a [f64],
        t: f64,
    },
}

impl Dir<'_> {
    fn component(&self, slot: Slot) -> f64 {
        match *self {
            Dir::Zero => 0.0,
            Dir::Unit(s) => {
                if s == slot {
                    1.0
                } else {
                    0.0
                }
            }
            Dir::Along { q, v, a, t } => {
                let pick = |xs: &[f64], i: usize| xs.get(i).copied().unwrap_or(0.0);
                match slot {
                    Slot::Q(i) => pick(q, i),
                    Slot::V(i) => pick(v, i),
                    Slot::A(i) => pick(a, i),
                    Slot::T => t,
                }
            }
        }
    }
}

fn seeded(values: &[f64], d1: &Dir<'_>, d2: &Dir<'_>, slot: fn(usize) -> Slot) -> Vec<HD> {
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| HD::new(x, d1.component(slot(i)), d2.component(slot(i)), 0.0))
        .collect()
}

fn evaluation_error(p: &Point<'_>, value: f64) -> Error {
    Error::Evaluation {
        value,
        q: p.q.to_vec(),
        v: p.v.to_vec(),
        t: p.t,
    }
}

/// Evaluate `field` with hyper-dual seeds `d1` and `d2`.
///
/// For every output `f`, the result holds `f`, `∇f·d1`, `∇f·d2` and
/// `d1ᵀ(∇²f)d2` in its `re`, `eps1`, `eps2` and `eps1eps2` parts.
pub fn directional(field: &dyn Field, p: &Point<'_>, d1: &Dir<'_>, d2: &Dir<'_>) -> Vec<HD> {
    let q = seeded(p.q, d1, d2, Slot::Q);
    let v = seeded(p.v, d1, d2, Slot::V);
    let a = seeded(p.a, d1, d2, Slot::A);
    let t = HD::new(p.t, d1.component(Slot::T), d2.component(Slot::T), 0.0);
    let mut out = vec![HD::new(0.0, 0.0, 0.0, 0.0); field.outputs()];
    field.eval(
        &Args {
            q: &q,
            v: &v,
            a: &a,
            t,
        },
        &mut out,
    );
    out
}

/// Plain values of `field` at `p`.
pub fn values(field: &dyn Field, p: &Point<'_>) -> Result<Vector> {
    let out = directional(field, p, &Dir::Zero, &Dir::Zero);
    let vals = Vector::from_iterator(out.len(), out.iter().map(|x| x.re));
    if let Some(bad) = vals.iter().find(|x| !x.is_finite()) {
        return Err(evaluation_error(p, *bad));
    }
    Ok(vals)
}

/// Jacobian of `field` with respect to one argument block (`Slot::Q(0)`,
/// `Slot::V(0)` or `Slot::A(0)` select the block; the index is ignored).
pub fn jacobian(field: &dyn Field, p: &Point<'_>, block: Slot) -> Result<Matrix> {
    let (k, slot): (usize, fn(usize) -> Slot) = match block {
        Slot::Q(_) => (p.q.len(), Slot::Q),
        Slot::V(_) => (p.v.len(), Slot::V),
        Slot::A(_) => (p.a.len(), Slot::A),
        Slot::T => (1, |_| Slot::T),
    };
    let m = field.outputs();
    let mut jac = Matrix::zeros(m, k);
    for j in 0..k {
        let out = directional(field, p, &Dir::Unit(slot(j)), &Dir::Zero);
        for (r, x) in out.iter().enumerate() {
            if !x.eps1.is_finite() {
                return Err(evaluation_error(p, x.eps1));
            }
            jac[(r, j)] = x.eps1;
        }
    }
    Ok(jac)
}

/// First partials and the velocity rows of the second partials of a scalar
/// function of `(q, v, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub grad_q: Vector,
    pub grad_v: Vector,
    /// `∂²f/∂v∂v`, symmetrized.
    pub hess_vv: Matrix,
    /// `hess_vq[(i, j)] = ∂²f/∂vⁱ∂qʲ`.
    pub hess_vq: Matrix,
    /// `∂²f/∂v∂t`.
    pub hess_vt: Vector,
    pub dt_partial: f64,
    /// Frobenius norm of `H − Hᵀ` before symmetrization.
    pub asymmetry: f64,
}

impl DerivativeBundle {
    fn zeros(n: usize) -> Self {
        DerivativeBundle {
            value: 0.0,
            grad_q: Vector::zeros(n),
            grad_v: Vector::zeros(n),
            hess_vv: Matrix::zeros(n, n),
            hess_vq: Matrix::zeros(n, n),
            hess_vt: Vector::zeros(n),
            dt_partial: 0.0,
            asymmetry: 0.0,
        }
    }

    fn finish(mut self, p: &Point<'_>) -> Result<Self> {
        let asym = &self.hess_vv - self.hess_vv.transpose();
        self.asymmetry = asym.norm();
        self.hess_vv = (&self.hess_vv + self.hess_vv.transpose()) * 0.5;
        let all = std::iter::once(self.value)
            .chain(self.grad_q.iter().copied())
            .chain(self.grad_v.iter().copied())
            .chain(self.hess_vv.iter().copied())
            .chain(self.hess_vq.iter().copied())
            .chain(self.hess_vt.iter().copied())
            .chain(std::iter::once(self.dt_partial));
        for x in all {
            if !x.is_finite() {
                return Err(evaluation_error(p, x));
            }
        }
        Ok(self)
    }
}

/// Derivative bundles of every output of `field` at `p`.
///
/// Uses `n(2n+1)` hyper-dual evaluations: every velocity direction paired
/// with every `(q, v, t)` direction. All entries are exact up to rounding.
pub fn differentiate_field(field: &dyn Field, p: &Point<'_>) -> Result<Vec<DerivativeBundle>> {
    let n = p.v.len();
    let m = field.outputs();
    let mut bundles = vec![DerivativeBundle::zeros(n); m];
    let mut others: Vec<Slot> = (0..n).map(Slot::Q).collect();
    others.extend((0..n).map(Slot::V));
    others.push(Slot::T);

    for i in 0..n {
        for &slot in &others {
            let out = directional(field, p, &Dir::Unit(Slot::V(i)), &Dir::Unit(slot));
            for (b, x) in bundles.iter_mut().zip(&out) {
                b.value = x.re;
                b.grad_v[i] = x.eps1;
                match slot {
                    Slot::Q(j) => {
                        b.grad_q[j] = x.eps2;
                        b.hess_vq[(i, j)] = x.eps1eps2;
                    }
                    Slot::V(j) => b.hess_vv[(i, j)] = x.eps1eps2,
                    Slot::T => {
                        b.dt_partial = x.eps2;
                        b.hess_vt[i] = x.eps1eps2;
                    }
                    Slot::A(_) => unreachable!(),
                }
            }
        }
    }
    if n == 0 {
        let out = directional(field, p, &Dir::Zero, &Dir::Unit(Slot::T));
        for (b, x) in bundles.iter_mut().zip(&out) {
            b.value = x.re;
            b.dt_partial = x.eps2;
        }
    }
    bundles.into_iter().map(|b| b.finish(p)).collect()
}

/// Derivative bundle of a scalar field (its first output) at `(q, v, t)`.
pub fn differentiate(field: &dyn Field, q: &[f64], v: &[f64], t: f64) -> Result<DerivativeBundle> {
    let p = Point::new(q, v, t);
    let mut all = differentiate_field(field, &p)?;
    Ok(all.swap_remove(0))
}

/// Central-difference fallback for functions that only accept `f64`.
///
/// First partials use `h = cbrt(ε)·max(1, |x|)`; mixed second partials use
/// the four-point product stencil with `h = ε^¼·max(1, |x|)`.
pub fn differentiate_fd<F>(f: F, q: &[f64], v: &[f64], t: f64) -> Result<DerivativeBundle>
where
    F: Fn(&[f64], &[f64], f64) -> f64,
{
    let n = v.len();
    let p = Point::new(q, v, t);
    let h1 = |x: f64| f64::EPSILON.cbrt() * x.abs().max(1.0);
    let h2 = |x: f64| f64::EPSILON.sqrt().sqrt() * x.abs().max(1.0);

    // Flat argument z = (q, v, t) so both stencils share one code path.
    let mut z: Vec<f64> = q.iter().chain(v).copied().collect();
    z.push(t);
    let eval = |z: &[f64]| f(&z[..n], &z[n..2 * n], z[2 * n]);

    let mut b = DerivativeBundle::zeros(n);
    b.value = eval(&z);
    let mut grad = vec![0.0; 2 * n + 1];
    for (k, g) in grad.iter_mut().enumerate() {
        let h = h1(z[k]);
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[k] += h;
        zm[k] -= h;
        *g = (eval(&zp) - eval(&zm)) / (2.0 * h);
    }
    for i in 0..n {
        b.grad_q[i] = grad[i];
        b.grad_v[i] = grad[n + i];
    }
    b.dt_partial = grad[2 * n];

    let mixed = |i: usize, j: usize| {
        let (hi, hj) = (h2(z[i]), h2(z[j]));
        let shifted = |si: f64, sj: f64| {
            let mut zz = z.clone();
            zz[i] += si * hi;
            zz[j] += sj * hj;
            eval(&zz)
        };
        (shifted(1.0, 1.0) - shifted(1.0, -1.0) - shifted(-1.0, 1.0) + shifted(-1.0, -1.0))
            / (4.0 * hi * hj)
    };
    for i in 0..n {
        let vi = n + i;
        for j in 0..n {
            b.hess_vq[(i, j)] = mixed(vi, j);
            b.hess_vv[(i, j)] = if i == j {
                let h = h2(z[vi]);
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[vi] += h;
                zm[vi] -= h;
                (eval(&zp) - 2.0 * b.value + eval(&zm)) / (h * h)
            } else {
                mixed(vi, n + j)
            };
        }
        b.hess_vt[i] = mixed(vi, 2 * n);
    }
    b.finish(&p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{constant, scalar_field, DualNum};

    #[test]
    fn polynomial_partials() {
        // f = q0² v0
        let f = scalar_field(|x| x.q[0] * x.q[0] * x.v[0]);
        let b = differentiate(&*f, &[3.0], &[2.0], 0.0).unwrap();
        assert_eq!(b.value, 18.0);
        assert_eq!(b.grad_q[0], 12.0);
        assert_eq!(b.grad_v[0], 9.0);
        assert_eq!(b.hess_vv[(0, 0)], 0.0);
        assert_eq!(b.hess_vq[(0, 0)], 6.0);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let f = scalar_field(|_| constant(4.5));
        let b = differentiate(&*f, &[1.0, -2.0], &[0.3, 0.1], 7.0).unwrap();
        assert_eq!(b.value, 4.5);
        assert!(b.grad_q.iter().chain(b.grad_v.iter()).all(|x| *x == 0.0));
        assert!(b.hess_vv.iter().chain(b.hess_vq.iter()).all(|x| *x == 0.0));
        assert_eq!(b.dt_partial, 0.0);
    }

    #[test]
    fn quadratic_form() {
        let f = scalar_field(|x| (x.v[0] * x.v[0] + x.v[1] * x.v[1]) * 0.5);
        let b = differentiate(&*f, &[0.0, 0.0], &[1.0, 2.0], 0.0).unwrap();
        assert_eq!(b.grad_v.as_slice(), &[1.0, 2.0]);
        assert_eq!(b.hess_vv, Matrix::identity(2, 2));
    }

    #[test]
    fn finite_difference_matches_cubic() {
        // f = q0 v0 v1 + v1³ t + q1² v0
        let fd = |q: &[f64], v: &[f64], t: f64| q[0] * v[0] * v[1] + v[1].powi(3) * t + q[1] * q[1] * v[0];
        let b = differentiate_fd(fd, &[0.7, -1.3], &[1.1, 0.4], 2.0).unwrap();
        let (q, v, t) = ([0.7, -1.3], [1.1, 0.4], 2.0);
        assert!((b.grad_v[0] - (q[0] * v[1] + q[1] * q[1])).abs() < 1e-6);
        assert!((b.grad_v[1] - (q[0] * v[0] + 3.0 * v[1] * v[1] * t)).abs() < 1e-6);
        assert!((b.hess_vv[(1, 1)] - 6.0 * v[1] * t).abs() < 1e-6);
        assert!((b.hess_vv[(0, 1)] - q[0]).abs() < 1e-6);
        assert!((b.hess_vq[(0, 1)] - 2.0 * q[1]).abs() < 1e-6);
        assert!((b.hess_vq[(1, 0)] - v[0]).abs() < 1e-6);
        assert!((b.hess_vt[1] - 3.0 * v[1] * v[1]).abs() < 1e-6);
        assert!((b.dt_partial - v[1].powi(3)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_value_is_reported() {
        let f = scalar_field(|x| x.v[0].recip());
        let err = differentiate(&*f, &[0.0], &[0.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::Evaluation { .. }));
    }

    #[test]
    fn directional_second_derivative() {
        // d²/ds² f(q + s w) for f = q0² q1 equals wᵀ H w
        let f = scalar_field(|x| x.q[0] * x.q[0] * x.q[1]);
        let (q, w) = ([1.0, 2.0], [0.5, -1.0]);
        let p = Point::new(&q, &[0.0, 0.0], 0.0);
        let dir = Dir::Along { q: &w, v: &[], a: &[], t: 0.0 };
        let out = directional(&*f, &p, &dir, &dir);
        // H = [[2 q1, 2 q0], [2 q0, 0]]
        let expected = 2.0 * q[1] * w[0] * w[0] + 2.0 * 2.0 * q[0] * w[0] * w[1];
        assert!((out[0].eps1eps2 - expected).abs() < 1e-14);
    }
}
