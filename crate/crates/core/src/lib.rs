//! Core algorithms for turning a static triangle mesh into a rigged asset.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. It covers
//! the whole pipeline:
//!
//! * [`geometry`]: mesh / skeleton types, unit-cube normalization, surface
//!   sampling and nearest-vertex transfer.
//! * [`sequencer`]: skeleton ⇄ token sequence conversion with spatial and
//!   hierarchical bone orderings.
//! * [`seqmodel`]: a small point-cloud encoder plus decoder-only transformer
//!   trained with next-token cross-entropy, and autoregressive sampling.
//! * [`geodesic`]: voxelization, volumetric geodesic distances, the
//!   normalized prior matrix and a geodesic-voxel-binding baseline.
//! * [`skindiff`]: functional diffusion over skinning-weight functions.
//! * [`animation`]: linear blend skinning and random poses.
//! * [`metrics`]: chamfer skeleton metrics and skinning metrics.
//! * [`synthgen`]: procedural rigged shapes with analytic ground truth.
//!
//! [`nn`] holds the reverse-mode tape shared by both learned models.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod animation;
pub mod config;
pub mod error;
pub mod geodesic;
pub mod geometry;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod seqmodel;
pub mod sequencer;
pub mod skin;
pub mod skindiff;
pub mod synthgen;

pub use error::{Error, Result};
pub use geometry::{Mesh, NormalizationTransform, PointCloud, Skeleton};
pub use math::{Mat3, Matrix, Vec3};
pub use skin::SkinMatrix;
