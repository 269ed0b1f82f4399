//! Scenario files, the built-in gallery and the runner behind `nhsim`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod expr;
pub mod registry;
pub mod run;
pub mod scenario;
