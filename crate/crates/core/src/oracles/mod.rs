//! Reference solutions: the multiplier of linear equations, the explicit
//! linear Feynman-Kac estimator, and deterministic reductions.

mod fk;
mod gamma;

pub use fk::{
    brownian_bundle, deterministic_fk, explicit_linear_fk, gauss_hermite, heat_closed_form, FkOptions, OracleEstimate,
};
pub use gamma::{gamma_functional, linear_solution, GammaTable, LinearDriver};
