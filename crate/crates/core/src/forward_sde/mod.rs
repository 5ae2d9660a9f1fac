//! Forward diffusion `dX = b(X) ds + sigma(X) dW` and its first variation.

mod coefficients;
mod paths;

pub use coefficients::{check_coefficients, CoefficientReport, DiffusionFamily, DriftFamily, SdeCoefficients};
pub use paths::{brownian_increments, moment_probe, simulate, simulate_with_increments, InitialState, PathBundle};
