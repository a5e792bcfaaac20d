//! Numerical laboratory for the two-dimensional chemotaxis–Stokes system
//! with singular sensitivity, in the original `(n, c, u)` and logarithmic
//! `(n, z, u)` variables.

pub mod config;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod functional_constants;
pub mod grid;
pub mod linalg;
pub mod monitor;
pub mod regularize;
pub mod report;
pub mod scenario;
mod spectral;
pub mod stokes;

pub use config::RunConfig;
pub use dynamics::{Formulation, Integrator, PotentialData, SimState, TransportSign};
pub use energy::{certify, Certificate, Constants};
pub use error::{Error, Result};
pub use functional_constants::{ConstantEstimate, ConstantName};
pub use grid::{Bc, GridSpec, ScalarField, VectorField};
pub use monitor::{Monitor, TraceRecord};
pub use regularize::Sensitivity;
pub use scenario::run_scenario;
pub use stokes::StokesSolver;
