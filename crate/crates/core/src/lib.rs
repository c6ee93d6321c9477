//! Doubly-robust estimation of average treatment effects when treatment
//! assignment and potential outcomes share unobserved low-rank factors.
//!
//! The pipeline is:
//!
//! 1. [`cfsvd::cfsvd`] estimates the nuisance matrices `(Θ̂⁰, Θ̂¹, P̂)` by
//!    cross-fitted Tall-Wide completion ([`tw`], [`crossfit`]).
//! 2. [`estimators`] turns them into OI, IPW and DR estimates of the
//!    per-outcome effect `τ_j`, with normal confidence intervals for DR.
//!
//! [`sim`] reproduces the Monte-Carlo design used to validate the estimators,
//! and [`panel`] covers lagged effects and staggered adoption.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the usual `f64` instantiation.

pub mod cfsvd;
pub mod crossfit;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod panel;
pub mod scalar;
pub mod sim;
pub mod tw;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = matrix::DenseMatrix<f64>;
pub type Matrix32 = matrix::DenseMatrix<f32>;
pub type Masked = matrix::MaskedMatrix<f64>;
pub type Masked32 = matrix::MaskedMatrix<f32>;
