//! Least-squares Monte Carlo solver for backward doubly stochastic
//! equations on a fixed field realization, with contraction, moment and
//! variational diagnostics.

mod basis;
mod driver;
mod picard;
mod solver;
mod terminal;
mod variational;

pub use basis::{BasisKind, Design, FeatureMap, Surface};
pub use driver::{
    parse_terms, validate_driver, Driver, DriverFn, DriverProbe, DriverReport, DriverTerm, Partials, TermKind, TimeShape,
};
pub use picard::{picard_monitor, ContractionReport, WeightedNormConfig};
pub use solver::{moment_report, solve, BackwardSolution, MomentReport, Scheme, SolverConfig};
pub use terminal::TerminalCondition;
pub use variational::{surface_z, variational_z, VariationalZ};
