//! Numerical toolkit for backward doubly stochastic differential equations
//! driven by a spatially correlated martingale field, and for the
//! stochastic PDEs they represent.
//!
//! The numerical core is generic over [`Real`] (`f64` or `f32`); the aliases
//! at the crate root fix it to `f64`.

// NaN must fail the parameter checks, hence `!(x > 0)` style guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bdsde_solver;
pub mod container;
pub mod error;
pub mod forward_sde;
pub mod grid;
pub mod horizon;
pub mod kunita_calculus;
pub mod linalg;
pub mod noise_field;
pub mod oracles;
pub mod rng;
pub mod scalar;
pub mod spde_fd;
pub mod stats;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use scalar::Real;

pub type Kernel = noise_field::CovarianceKernel<f64>;
pub type Realization = noise_field::FieldRealization<f64>;
pub type Grid = grid::TimeGrid<f64>;
pub type Coefficients = forward_sde::SdeCoefficients<f64>;
pub type Paths = forward_sde::PathBundle<f64>;
pub type Solution = bdsde_solver::BackwardSolution<f64>;
pub type Field = spde_fd::FieldSolution<f64>;
