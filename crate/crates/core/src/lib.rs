//! Sparse-view cone-beam CT reconstruction.
//!
//! The crate covers the whole numerical pipeline: circular-orbit scan
//! geometry, volumes and multilinear interpolation, a matched ray-driven
//! projector pair, FDK and SART baselines, a small reverse-mode autodiff
//! engine, the multi-scale volumetric / scale-view attention network that
//! predicts attenuation at arbitrary points, its training loop and the
//! PSNR/SSIM metrics.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! without `std` (only `alloc` is required). The default `std` feature turns
//! on data-parallel kernels through rayon; results do not depend on it.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod classical;
mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
mod par;
pub mod projector;
pub mod tensor;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{AnglePerturbation, DetectorGrid, DetectorPoint, ScanGeometry};
pub use projector::{FeatureMaps, FeatureVolume, FeatureVolumeSpec, ProjectionSet};
pub use volume::{PointBatch, Volume, VolumeGrid};

/// Seed used whenever the caller does not pick one.
pub const DEFAULT_SEED: u64 = 17;
