//! Certification of smoothed classifiers with isotropic, diagonal and full
//! covariance Gaussian noise.
//!
//! The crate is `no_std` (it needs `alloc`). Enable the `std` feature to let
//! nalgebra use its blocked matrix products.

#![no_std]

extern crate alloc;

pub mod analytic;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod optimizers;
pub mod sampling;
pub mod smoothing;
pub mod spd_manifold;
pub mod stats;

pub use classifier::{Activation, Mlp, SoftClassifier, TrainConfig};
pub use dataset::{LabeledDataset, Sample};
pub use error::{Error, Result};
pub use smoothing::{Certificate, Method, SmoothingSpec};
pub use spd_manifold::{SpdMatrix, SymMatrix};
pub use stats::ConfidenceParams;

pub use nalgebra;
