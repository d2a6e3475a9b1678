//! Shape-correspondence benchmarking toolkit.
//!
//! Three families of correspondence methods (groupwise particle systems,
//! pairwise spherical-harmonic parameterization, kernel-deformation atlases)
//! produce point correspondences over an ensemble of closed surfaces. From
//! these, point distribution models are built and evaluated with compactness,
//! generalization and specificity curves, clustering, and a landmark
//! measurement pipeline checked against synthetic ground truth.

pub mod clinical;
pub mod deform;
pub mod ensembles;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod particles;
pub mod shapestats;
pub mod spherical;

pub use error::{Error, Result};
pub use geometry::Vec3;
