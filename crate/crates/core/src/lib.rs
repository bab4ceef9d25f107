//! Mixture-of-generators spectral GAN for class-imbalanced 1-D spectra.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a tape-style reverse-mode differentiation engine over dense
//!   `f64` tensors.
//! - [`nn`]: layers, Xavier initialisation and the Adam optimiser.
//! - [`models`]: the generator bank with per-class domain projection, the
//!   discriminator, the parallel-branch classifier and the checkpoint format.
//! - [`losses`]: prior-weighted game losses and the analytic optimal
//!   discriminator / Jensen-Shannon oracles.
//! - [`data`]: spectral datasets, normalisation, stratified splits, synthetic
//!   imbalanced spectra.
//! - [`train`]: the D -> C -> G training loop and the ACSGAN/ACHSGAN baselines.
//! - [`eval`]: confusion-matrix metrics and McNemar's test.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
