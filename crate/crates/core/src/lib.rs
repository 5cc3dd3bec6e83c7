//! Point-cloud adversarial attack, defense, and purification toolkit.
//!
//! The crate bundles everything needed to study input-level defenses for
//! 3D point-cloud classifiers at desk scale: a synthetic labeled shape
//! generator, two mini classifiers with exact input gradients, a set of
//! white-box untargeted attacks, the SRS/SOR baseline defenses, a learned
//! per-point counter-perturbation purifier, and an evaluation harness that
//! renders robustness tables, transfer matrices, ablations, and plots.
//!
//! All numeric code is generic over the scalar type through [`Real`];
//! training and evaluation run in `f64` (see [`Scalar`]), while on-disk
//! coordinate arrays are single precision.

pub mod apc;
pub mod attacks;
pub mod config;
pub mod dataset;
pub mod defenses;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod victims;

pub use error::{Error, Result};
pub use geometry::PointCloud;
pub use scalar::Real;

/// Default scalar for all in-memory computation.
pub type Scalar = f64;

/// Point cloud over the default scalar.
pub type Cloud = PointCloud<Scalar>;

/// Single-precision cloud, the on-disk representation.
pub type Cloud32 = PointCloud<f32>;

/// Crate version string recorded in report metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
