//! Correspondence models, Procrustes alignment and PCA shape models.

mod model;
mod pdm;
mod procrustes;

pub use model::{flatten, read_points, unflatten, write_points, CorrespondenceModel};
pub use pdm::{build_pdm, Pdm};
pub use procrustes::{procrustes_align, procrustes_align_with, Alignment};
