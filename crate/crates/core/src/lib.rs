//! Factor Analysis label model for weak supervision.
//!
//! Labelling functions vote `1`, `0` or abstain (`-1`) on each data point.
//! The resulting labelling matrix is fitted with a one-factor (or few-factor)
//! Gaussian factor analysis model; the posterior mean of the first factor is
//! dichotomised into binary pseudo-labels.

pub mod ci_baseline;
#[cfg(feature = "cli")]
pub mod cli;
pub mod compare;
pub mod error;
pub mod fa;
pub mod label_model;
pub mod labelling;
pub mod metrics;
pub mod synthetic;

pub use error::{Error, Result};
