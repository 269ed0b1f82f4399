//! Dense linear algebra and the derivative engine.
//!
//! User functions of `(q, v, a, t)` implement [`Field`] over hyper-dual
//! numbers, which gives exact first and second partial derivatives along any
//! two seeded directions in a single evaluation. Plain `f64` closures can be
//! differentiated with central differences through
//! [`differentiate_fd`].

mod dense;
mod derivative;
mod saddle;

use std::sync::Arc;

pub use dense::{identity_hd, inverse_hd, lift_matrix, matmul_hd, transpose_hd};
pub use derivative::{
    differentiate, differentiate_fd, differentiate_field, directional, jacobian, values,
    DerivativeBundle, Dir, Slot,
};
pub use saddle::{solve_saddle, SADDLE_CONDITION_LIMIT};

/// Elementary functions (`sin`, `sqrt`, `powi`, …) on [`HD`].
pub use num_dual::DualNum;

/// Hyper-dual scalar used for every user function evaluation.
pub type HD = num_dual::HyperDual64;

/// Lift a real number into a hyper-dual constant.
#[inline]
pub fn constant(x: f64) -> HD {
    HD::new(x, 0.0, 0.0, 0.0)
}

/// Arguments handed to a [`Field`]. `a` is empty for functions that do not
/// depend on accelerations.
#[derive(Debug, Clone, Copy)]
pub struct Args<'a> {
    pub q: &'a [HD],
    pub v: &'a [HD],
    pub a: &'a [HD],
    pub t: HD,
}

/// A vector-valued function of configuration, velocity, acceleration and time.
pub trait Field: Send + Sync {
    /// Number of output components.
    fn outputs(&self) -> usize;

    fn eval(&self, x: &Args<'_>, out: &mut [HD]);
}

impl<F: Field + ?Sized> Field for Arc<F> {
    fn outputs(&self) -> usize {
        (**self).outputs()
    }

    fn eval(&self, x: &Args<'_>, out: &mut [HD]) {
        (**self).eval(x, out)
    }
}

/// Real-valued evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub q: &'a [f64],
    pub v: &'a [f64],
    pub a: &'a [f64],
    pub t: f64,
}

impl<'a> Point<'a> {
    pub fn new(q: &'a [f64], v: &'a [f64], t: f64) -> Self {
        Point { q, v, a: &[], t }
    }

    pub fn with_accel(mut self, a: &'a [f64]) -> Self {
        self.a = a;
        self
    }
}

struct ScalarFn<F>(F);

impl<F> Field for ScalarFn<F>
where
    F: Fn(&Args<'_>) -> HD + Send + Sync,
{
    fn outputs(&self) -> usize {
        1
    }

    fn eval(&self, x: &Args<'_>, out: &mut [HD]) {
        out[0] = (self.0)(x);
    }
}

struct VectorFn<F> {
    len: usize,
    f: F,
}

impl<F> Field for VectorFn<F>
where
    F: Fn(&Args<'_>, &mut [HD]) + Send + Sync,
{
    fn outputs(&self) -> usize {
        self.len
    }

    fn eval(&self, x: &Args<'_>, out: &mut [HD]) {
        (self.f)(x, out)
    }
}

/// Wrap a scalar closure as a [`Field`].
pub fn scalar_field<F>(f: F) -> Arc<dyn Field>
where
    F: Fn(&Args<'_>) -> HD + Send + Sync + 'static,
{
    Arc::new(ScalarFn(f))
}

/// Wrap a vector closure writing `len` outputs as a [`Field`].
pub fn vector_field<F>(len: usize, f: F) -> Arc<dyn Field>
where
    F: Fn(&Args<'_>, &mut [HD]) + Send + Sync + 'static,
{
    Arc::new(VectorFn { len, f })
}
