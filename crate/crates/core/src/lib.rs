//! Permutation-invariant hierarchical encoder-decoder networks for point clouds.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] is a small reverse-mode tape over dense tensors.
//! * [`geometry`] holds the exact neighbour search, atrous selection,
//!   farthest point sampling and interpolation kernels.
//! * [`layers`] composes both into point atrous convolution, edge-preserved
//!   pooling/unpooling and the chained skip branches.
//! * [`losses`] and [`models`] build the classification and segmentation
//!   networks and their training step.
//! * [`harness`] covers synthetic data, file formats, metrics and experiments.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod layers;
pub mod losses;
pub mod models;

pub use error::{Error, Result};
