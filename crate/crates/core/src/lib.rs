//! Numerical laboratory for super-Brownian motion with a single point catalyst.
//!
//! Modules, bottom up:
//! - [`kernels`] / [`test_function`]: heat kernel, semigroup and generator on
//!   polynomial×Gaussian test functions.
//! - [`evolution`]: the log-Laplace evolution equation reduced to the catalyst
//!   (a weakly singular nonlinear Volterra equation) and the Laplace functionals.
//! - [`moments`]: first and second moment formulas and the Ornstein–Uhlenbeck
//!   limit covariance and characteristic functional.
//! - [`particle_sim`]: branching Brownian particles with a mollified catalyst.
//! - [`ou_process`]: exact sampling of the fluctuation limit.
//! - [`stats`]: Monte Carlo summaries and the convergence harness.
//! - [`verify`]: the acceptance checks, shared by the CLI and the test suite.
//! - [`config`] / [`cli`]: the flat key=value configuration and the `catsbm` runner.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod evolution;
pub mod io;
pub mod kernels;
pub mod moments;
pub mod oracle;
pub mod ou_process;
pub mod particle_sim;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod test_function;
pub mod verify;

pub use error::{Error, Result};
pub use kernels::{InitialMeasure, ModelParams};
pub use scalar::Scalar;
pub use test_function::TestFunction;

/// Double precision test function, the type every model formula works with.
pub type TestFn = TestFunction<f64>;
/// Single precision test function.
pub type TestFn32 = TestFunction<f32>;
