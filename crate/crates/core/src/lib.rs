//! Numerical laboratory for the implicit regularization of mini-batch SGD on
//! least squares.
//!
//! The crate compares four estimator families on a fixed design:
//!
//! * ridge regression and gradient flow / gradient descent, in closed form
//!   ([`closed_form`]);
//! * mini-batch SGD and its stochastic-gradient-flow surrogate, simulated by
//!   Euler–Maruyama ([`simulate`]);
//! * exact first and second moments of SGD over the mini-batch randomness
//!   ([`moments`]);
//! * risk formulas and the bounds relating all of them ([`theory`]).
//!
//! All closed forms run off one cached eigendecomposition of `XᵀX/n`
//! ([`spectral`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod error;
pub mod exec;
pub mod moments;
pub mod output;
pub mod problem;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod theory;

pub use error::{Error, Result};
pub use exec::Execution;
pub use problem::{DesignFamily, DesignSpec, ProblemSpec, RegressionProblem};
pub use spectral::Spectrum;
