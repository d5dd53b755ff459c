//! Patch-based convolutional classifier for pixel-wise built-up probability
//! mapping over tiled multi-band rasters.
//!
//! The crate covers the whole loop at desk scale: synthetic scenes
//! ([`synth`]), raster containers and tiling ([`raster`]), training-set
//! construction ([`sampling`]), the network and its kernels ([`model`],
//! [`nn`]), per-zone training, tiled prediction and model transfer
//! ([`pipeline`]), and accuracy assessment ([`evaluation`]).

pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
pub use par::Exec;
