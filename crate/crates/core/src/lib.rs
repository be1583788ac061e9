//! Principal-stratum mediation effects: multiply robust and cross-fitted
//! estimators, bootstrap and influence-function inference, sensitivity
//! analysis, a simulation harness and discrete-population oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod crossfit;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod model;
pub mod nuisance;
pub mod numeric;
pub mod oracle;
pub mod sensitivity;
pub mod simulation;

pub use error::{Error, ErrorClass, Result};
pub use model::{Dataset, MediatorKind, Monotonicity, Stratum, TargetIndex};
