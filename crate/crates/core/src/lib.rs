//! Adaptive dose-finding designs for estimating the minimum effective dose
//! under model uncertainty.
//!
//! The pieces, bottom up:
//!
//! * [`models`]: candidate dose-response shapes and the MED functional.
//! * [`design`]: MED variance, the compound design criterion, next-stage
//!   optimization and the efficiency certificate.
//! * [`inference`]: conjugate NIG updating, lattice quadrature over shape
//!   parameters, posterior model probabilities and shrinkage estimates.
//! * [`fitting`]: least-squares fits, AIC selection and the signal test used
//!   for the final analysis.
//! * [`simulator`]: complete adaptive trials and Monte Carlo studies.

// `!(x > 0.0)` also rejects NaN, which `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod design;
pub mod error;
pub mod fitting;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod simulator;

pub use error::{Error, Result};
pub use models::{DoseResponseModel, MedSpec, ParameterBounds, Shape};
