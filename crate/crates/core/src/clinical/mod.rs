//! Clustering, contour propagation, ostium measurements and statistical
//! comparison against ground truth.

mod ellipse;
mod kmeans;
mod stats;
mod tps;
mod validate;

pub use ellipse::{fit_ellipse, plane_angle, ramanujan_circumference, Contour, EllipseFit};
pub use kmeans::{adjusted_rand_index, kmeans, ClusterAssignment};
pub use stats::{paired_ttest, TTest};
pub use tps::{tps_warp, ThinPlateSpline};
pub use validate::{
    mark_contour_on_mean, measurements_csv, propagate_contour, validate_method, Anchor, AnchoredContour, ClusterTests,
    MeasurementRecord, PValueTable, ValidationResult, ValidationTruth, MEASUREMENTS, SIGNIFICANCE,
};

use crate::geometry::Vec3;
use crate::shapestats::CorrespondenceModel;
use crate::{Error, Result};

/// Per-correspondence mean of a cluster's member shapes.
pub fn cluster_mean_shape(model: &CorrespondenceModel, assignment: &ClusterAssignment, cluster: usize) -> Result<Vec<Vec3>> {
    let members = assignment.members(cluster);
    if members.is_empty() {
        return Err(Error::InvalidParameter(format!("cluster {} is empty", cluster + 1)));
    }
    Ok((0..model.num_points())
        .map(|m| members.iter().map(|&i| model.shape(i)[m]).sum::<Vec3>() / members.len() as f64)
        .collect())
}
