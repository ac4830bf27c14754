//! Blind video decaptioning.
//!
//! A residual encoder-decoder removes text overlays from short clips without
//! being told where the overlay is. The crate contains the network and a
//! small reverse-mode engine to train it, the reconstruction and temporal
//! losses, flow warping, a synthetic caption-overlay corpus generator,
//! evaluation metrics, and the training / inference pipeline.

pub mod autograd;
pub mod datagen;
pub mod error;
pub mod flowwarp;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use image::Image;
