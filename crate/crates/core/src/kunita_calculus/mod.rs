//! Backward Ito-Kunita integration against the field along forward paths,
//! realized brackets, and residual checks of the Ito and product rules.

mod integral;
mod ito;

pub use integral::{
    backward_integral, increments_along, quadratic_variation, qv_quadrature, request_along_paths, sample_integrand,
    BackwardIntegralResult, NoiseIntegrator,
};
pub(crate) use integral::align;
pub use ito::{ito_residual, product_rule_residual, BvProcess, ItoResiduals, ProcessSpec, ProcessTerm, TestFunction};
