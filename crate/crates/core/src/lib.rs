//! Localized mesh editing over an unordered set of anchored latent tokens.
//!
//! The pipeline encodes a surface into tokens ([`codec`]), localizes an edit
//! region from a single 2-D mask through attention statistics ([`select`]),
//! denoises only the editable tokens with a rectified-flow RePaint loop and
//! drift-aware pruning ([`edit`]), then decodes and retextures the result
//! ([`codec`], [`texture`]). [`eval`] holds the measurement harness.

pub mod backbone;
pub mod codec;
pub mod edit;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod scenes;
pub mod select;
pub mod texture;

pub use error::{Error, Result};

/// World-space 3-vector used throughout the crate.
pub type Vec3 = nalgebra::Vector3<f64>;
