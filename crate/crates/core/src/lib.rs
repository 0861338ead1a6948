//! Multi-group uncertainty quantification for long-form generation factuality.
//!
//! Two families of post-hoc methods operate on per-claim confidence scores:
//!
//! - claim-level calibration ([`calibration`]): histogram binning, iterative
//!   grouped histogram binning, Platt scaling and group-conditional logistic
//!   regression;
//! - output-level conformal prediction ([`conformal`]): split conformal,
//!   multivalid split conformal, and (group-conditional) conformalized
//!   quantile regression over interpolated score vectors.
//!
//! Every method is exposed both as a free function and as a named strategy in
//! a registry ([`calibration::CalibratorRegistry`],
//! [`conformal::ConformalRegistry`]) so the experiment runner can select them
//! from configuration.

pub mod calibration;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod solvers;

pub use error::{Error, Result};
