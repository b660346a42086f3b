//! Bias-corrected estimation of a test-set label mean under covariate shift.
//!
//! The crate is organised around the kernel mean matching (KMM) estimator:
//!
//! - [`kernels`]: kernel families, Gram assembly and kernel-sum helpers.
//! - [`kmm`]: the box-constrained quadratic program that produces the weights.
//! - [`estimators`]: KMM, plug-in ridge regression, KDE-ratio and oracle
//!   estimates of `E[Y_te]`, plus classifier ranking.
//! - [`bounds`]: closed-form finite-sample confidence bounds and rate exponents.
//! - [`scenarios`]: synthetic shifts with known ground truth and the Monte-Carlo
//!   harness that checks coverage and convergence rates.

pub mod bounds;
pub mod error;
pub mod estimators;
pub mod features;
pub mod kernels;
pub mod kmm;
pub mod scenarios;
mod spectral;

pub use error::{Error, Result};
pub use features::FeatureMatrix;
