//! Deformation-atlas correspondence: a template is deformed onto every
//! sample by a kernel velocity field carried by shared control points and
//! per-sample momenta; meshes are compared with the varifold metric.

mod atlas;
mod flow;
mod varifold;

pub use atlas::{
    correspond_deform, data_term_gradient, ensemble_diagonal, estimate_atlas, farthest_point_sampling, mean_template,
    sphere_template, Atlas, AtlasIteration, DataGradient, DeformConfig,
};
pub use flow::{deformation_field, flow, kernel, DeformationParams};
pub use varifold::{varifold_distance, varifold_distance_squared, varifold_inner};
