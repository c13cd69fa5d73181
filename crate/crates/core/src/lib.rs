//! Surrogate-powered inference.
//!
//! Combines a small inverse-probability-weighted validation sample with
//! cheap surrogate outcomes observed on the whole cohort:
//!
//! - [`glm`]: weighted logistic/linear m-estimation, Firth's modified score,
//!   bread matrices and influence rows.
//! - [`augment`]: plug-in and penalized augmentation matrices, the augmented
//!   estimator and its sandwich-free variance.
//! - [`labeling`]: optimal labeling probabilities under a budget and the
//!   adaptive multiwave procedure.
//! - [`datagen`]: synthetic cohorts with AR(1) covariates and misclassified
//!   surrogates.
//! - [`harness`]: simulation studies, result files and the command line.

pub mod augment;
pub mod datagen;
pub mod error;
pub mod glm;
pub mod harness;
pub mod labeling;
pub mod numerics;
pub mod pipeline;
pub mod rng;

pub use error::{Result, SpiError};

