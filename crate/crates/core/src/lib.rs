//! Lidar decay-rate maps stored as coefficients in the discrete cosine domain.
//!
//! A [`SpectralMap`] holds an `L × M` coefficient matrix and turns it into a
//! continuously differentiable, nonnegative decay-rate field by squaring the
//! continuous extension of the inverse cosine transform. On top of that field
//! the crate provides:
//!
//! * [`forward`]: closed-form line integrals, survival probabilities and the
//!   mixed sub/return/super measurement density of a lidar ray;
//! * [`derivatives`]: analytic gradients and Hessians of the log-likelihood
//!   with respect to the coefficients, plus a finite-difference verifier;
//! * [`fit`]: maximum-likelihood map fitting with a trust-region Newton loop;
//! * [`grid`]: decay-rate grid maps, used as baseline and ground truth;
//! * [`data`]: Carmen log ingestion, patch extraction, scan files and an exact
//!   scan simulator;
//! * [`eval`]: map-value and likelihood comparisons, reports and PGM output.

pub mod data;
pub mod derivatives;
pub mod error;
pub mod eval;
pub mod field;
pub mod fit;
pub mod forward;
pub mod grid;
pub mod spectral;

pub use error::{Error, Result};
pub use field::DecayField;
pub use forward::{LidarRay, RayOutcome, ScanSet, SensorLimits};
pub use spectral::{Extent, Point2, Ray2, SpectralMap};
