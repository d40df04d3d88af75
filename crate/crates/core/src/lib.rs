//! Minimal-dispersion balancing weights for natural direct and indirect effects.

pub mod baseline;
pub mod basis;
pub mod data;
pub mod diagnostics;
pub mod dual;
pub mod error;
pub mod estimators;
pub mod inference;
pub(crate) mod linalg;
pub mod penalty;
pub mod run;
pub mod simulation;
pub mod tuning;
pub mod weights;

pub use error::{Error, Result};
