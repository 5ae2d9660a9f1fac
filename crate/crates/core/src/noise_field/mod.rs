//! Spatial covariance kernels and sampled realizations of the martingale
//! field `B(t, x)` with `<B(., x), B(., y)>_t = int_0^t q(s, x, y) ds`.
//!
//! A realization is only ever materialized at a finite set of declared
//! evaluation points per time step: every consumer (path bundles, grids,
//! oracles) registers its sites in a [`PointRequest`] first, then one joint
//! Gaussian draw per step produces increments with the exact law.

mod kernel;
mod realization;
mod sampler;
mod validate;

pub use kernel::{CovarianceKernel, KernelFamily, TimeFactor};
pub use realization::{FieldRealization, PointRequest, RealizationId, StepField};
pub use sampler::{sample_increments, sample_increments_with, sample_step, SamplerConfig};
pub use validate::{validate_kernel, KernelReport, ProbeSpec};
