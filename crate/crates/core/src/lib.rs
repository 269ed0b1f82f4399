//! Constrained Lagrangian dynamics with two inequivalent treatments of
//! nonholonomic constraints.
//!
//! * [`dalembert`] assembles the classical d'Alembert / Appell-Chetaev
//!   dynamics, where the multipliers are determined instantaneously and the
//!   reactions lie along the velocity gradients of the constraints.
//! * [`vakonomic`] assembles the variational (Lusternik) dynamics, where the
//!   multipliers are part of the dynamical state and the reactions carry
//!   extra derivative terms.
//!
//! Both are driven by [`integrate::simulate`]. The [`affine`] module applies
//! the two procedures to a homogeneously deformable body whose affine
//! velocity is constrained to be symmetric.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod constraints;
pub mod dalembert;
mod error;
pub mod integrate;
pub mod kernel;
pub mod lagrangian;
pub mod vakonomic;

pub use error::{Block, Error, Result};
pub use kernel::{Args, Field, HD};

/// Dense real vector.
pub type Vector = nalgebra::DVector<f64>;
/// Dense real matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
