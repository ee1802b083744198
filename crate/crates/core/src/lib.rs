//! Network autoregression for count (Poisson) and continuous panels.
//!
//! The crate covers network construction, the linear and nonlinear model
//! families, simulation, quasi-likelihood fitting, the quasi-score linearity
//! test, nuisance-parameter tests over a grid, and a Monte Carlo harness.

// `!(x > y)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod error;
pub mod linalg;
pub mod lintest;
pub mod model;
pub mod netgraph;
pub mod nuisance;
pub mod panel;
pub mod qmle;
pub mod rng;
pub mod stats;
pub mod studio;

pub use dgp::{CopulaSpec, CopulaStructure, Init, SimConfig};
pub use error::{Error, Result};
pub use lintest::TestResult;
pub use model::{Domain, Family, ModelSpec, StabilityVerdict};
pub use netgraph::Network;
pub use nuisance::{GammaGrid, LMProfile, ProfileTestResult};
pub use panel::Panel;
pub use qmle::FitResult;
