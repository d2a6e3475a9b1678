use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;

use super::{fit_ellipse, paired_ttest, plane_angle, tps_warp, ClusterAssignment, Contour, TTest};
use crate::geometry::Vec3;
use crate::shapestats::CorrespondenceModel;
use crate::{Error, Result};

/// A contour point fixed to a triple of correspondence points: barycentric
/// weights in the triangle's plane plus an offset along its unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    pub triple: [usize; 3],
    pub weights: [f64; 3],
    pub offset: f64,
}

impl Anchor {
    pub fn evaluate(&self, points: &[Vec3]) -> Vec3 {
        let [a, b, c] = self.triple.map(|i| points[i]);
        let n = (b - a).cross(&(c - a)).normalize();
        self.weights[0] * a + self.weights[1] * b + self.weights[2] * c + self.offset * n
    }
}

/// Contour expressed relative to a set of correspondence points.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchoredContour {
    pub anchors: Vec<Anchor>,
    /// Some contour point lies farther than twice the median point spacing
    /// from every correspondence.
    pub sparse: bool,
}

impl AnchoredContour {
    pub fn evaluate(&self, points: &[Vec3]) -> Vec<Vec3> {
        self.anchors.iter().map(|a| a.evaluate(points)).collect()
    }
}

/// Attaches each ring point to its nearest non-degenerate triple of
/// correspondence points on the mean shape.
pub fn mark_contour_on_mean(mean: &[Vec3], ring: &[Vec3]) -> Result<AnchoredContour> {
    if mean.len() < 3 {
        return Err(Error::InvalidParameter("anchoring needs at least 3 correspondence points".into()));
    }
    let spacing = median_spacing(mean);
    let mut sparse = false;
    let mut anchors = Vec::with_capacity(ring.len());
    for p in ring {
        let mut order: Vec<usize> = (0..mean.len()).collect();
        order.sort_by(|&i, &j| (mean[i] - p).norm_squared().total_cmp(&(mean[j] - p).norm_squared()).then(i.cmp(&j)));
        if (mean[order[0]] - p).norm() > 2.0 * spacing {
            sparse = true;
        }
        let (a, b) = (order[0], order[1]);
        let c = order[2..]
            .iter()
            .copied()
            .find(|&c| (mean[b] - mean[a]).cross(&(mean[c] - mean[a])).norm() > 1e-9 * (mean[b] - mean[a]).norm_squared())
            .ok_or_else(|| Error::Degenerate("correspondence points are collinear".into()))?;
        let (e1, e2) = (mean[b] - mean[a], mean[c] - mean[a]);
        let n = e1.cross(&e2).normalize();
        let m = Matrix3::from_columns(&[e1, e2, n]);
        let x = m
            .lu()
            .solve(&(p - mean[a]))
            .ok_or_else(|| Error::Degenerate("degenerate anchoring triangle".into()))?;
        anchors.push(Anchor {
            triple: [a, b, c],
            weights: [1.0 - x[0] - x[1], x[0], x[1]],
            offset: x[2],
        });
    }
    if sparse {
        log::warn!("contour lies far from the correspondence points; anchoring is sparse");
    }
    Ok(AnchoredContour { anchors, sparse })
}

fn median_spacing(points: &[Vec3]) -> f64 {
    let mut nn: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    nn[nn.len() / 2]
}

/// Warps an anchored contour from the mean correspondences to a sample's.
pub fn propagate_contour(contour: &AnchoredContour, mean: &[Vec3], sample: &[Vec3]) -> Result<Contour> {
    if mean.len() != sample.len() {
        return Err(Error::InvalidParameter(format!(
            "mean has {} correspondences, sample has {}",
            mean.len(),
            sample.len()
        )));
    }
    Ok(Contour::closed(tps_warp(mean, sample, &contour.evaluate(mean))?))
}

pub const MEASUREMENTS: [&str; 5] = ["max_diameter", "min_diameter", "area", "circumference", "plane_angle"];

/// Ostium measurements of one sample from one source.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub sample_id: String,
    /// 1-based cluster label.
    pub cluster: usize,
    pub source: String,
    pub max_mm: f64,
    pub min_mm: f64,
    pub area_mm2: f64,
    pub circ_mm: f64,
    pub angle_deg: f64,
}

impl MeasurementRecord {
    pub fn measure(contour: &Contour, septum_normal: &Vec3, sample_id: &str, cluster: usize, source: &str) -> Result<Self> {
        let fit = fit_ellipse(contour)?;
        Ok(Self {
            sample_id: sample_id.to_string(),
            cluster,
            source: source.to_string(),
            max_mm: fit.max_diameter,
            min_mm: fit.min_diameter,
            area_mm2: fit.area,
            circ_mm: fit.circumference,
            angle_deg: plane_angle(&fit.normal, septum_normal)?,
        })
    }

    pub fn values(&self) -> [f64; 5] {
        [self.max_mm, self.min_mm, self.area_mm2, self.circ_mm, self.angle_deg]
    }
}

pub fn measurements_csv(records: &[MeasurementRecord]) -> String {
    let mut out = String::from("sample_id,cluster,source,max_mm,min_mm,area_mm2,circ_mm,angle_deg\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.sample_id, r.cluster, r.source, r.max_mm, r.min_mm, r.area_mm2, r.circ_mm, r.angle_deg
        );
    }
    out
}

/// t-tests of one cluster; `None` where the cluster was too small.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTests {
    /// 1-based.
    pub cluster: usize,
    pub size: usize,
    pub tests: [Option<TTest>; 5],
}

/// p-values of every measurement in every cluster for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct PValueTable {
    pub method: String,
    pub clusters: Vec<ClusterTests>,
}

pub const SIGNIFICANCE: f64 = 0.01;

impl PValueTable {
    /// Number of tests run and number with p > 0.01.
    pub fn pass_count(&self) -> (usize, usize) {
        let tests: Vec<&TTest> = self.clusters.iter().flat_map(|c| c.tests.iter().flatten()).collect();
        (tests.len(), tests.iter().filter(|t| t.p > SIGNIFICANCE).count())
    }

    pub fn all_pass(&self) -> bool {
        let (run, passed) = self.pass_count();
        run == 5 * self.clusters.len() && passed == run
    }

    /// Rows are measurements, columns clusters; cells `p|pass` or `p|fail`,
    /// `n/a|skipped` for clusters under three members.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measurement");
        for c in &self.clusters {
            let _ = write!(out, ",cluster_{}", c.cluster);
        }
        out.push('\n');
        for (i, name) in MEASUREMENTS.iter().enumerate() {
            out.push_str(name);
            for c in &self.clusters {
                match &c.tests[i] {
                    Some(t) => {
                        let mark = if t.p > SIGNIFICANCE { "pass" } else { "fail" };
                        let _ = write!(out, ",{:.6e}|{mark}", t.p);
                    }
                    None => out.push_str(",n/a|skipped"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Ground-truth ostium data for validation, all in the model's frame.
#[derive(Clone, Copy, Debug)]
pub struct ValidationTruth<'a> {
    pub rings: &'a [Vec<Vec3>],
    pub septum_normals: &'a [Vec3],
}

#[derive(Clone, Debug)]
pub struct ValidationResult {
    pub records: Vec<MeasurementRecord>,
    pub table: PValueTable,
    pub sparse_clusters: Vec<usize>,
}

/// Per cluster: anchor the members' mean ground-truth ring on the cluster
/// mean correspondences, warp it to each member, measure, and t-test the
/// five measurements against ground truth.
pub fn validate_method(model: &CorrespondenceModel, truth: ValidationTruth<'_>, assignment: &ClusterAssignment) -> Result<ValidationResult> {
    let n = model.num_shapes();
    if truth.rings.len() != n || truth.septum_normals.len() != n || assignment.labels.len() != n {
        return Err(Error::InvalidParameter("model, ground truth and clustering disagree on N".into()));
    }
    let method = model.method().to_string();
    let mut records = Vec::new();
    let mut clusters = Vec::new();
    let mut sparse_clusters = Vec::new();
    for c in 0..assignment.k() {
        let members = assignment.members(c);
        let mut tests: [Option<TTest>; 5] = [None; 5];
        if members.is_empty() {
            clusters.push(ClusterTests { cluster: c + 1, size: 0, tests });
            continue;
        }
        let mean = super::cluster_mean_shape(model, assignment, c)?;
        let p = truth.rings[members[0]].len();
        let template: Vec<Vec3> = (0..p)
            .map(|i| members.iter().map(|&m| truth.rings[m][i]).sum::<Vec3>() / members.len() as f64)
            .collect();
        let anchored = mark_contour_on_mean(&mean, &template)?;
        if anchored.sparse {
            sparse_clusters.push(c + 1);
        }
        let mut gt = Vec::new();
        let mut est = Vec::new();
        for &m in &members {
            let id = &model.ids()[m];
            let g = MeasurementRecord::measure(
                &Contour::closed(truth.rings[m].clone()),
                &truth.septum_normals[m],
                id,
                c + 1,
                "ground_truth",
            )?;
            let contour = propagate_contour(&anchored, &mean, model.shape(m))?;
            let e = MeasurementRecord::measure(&contour, &truth.septum_normals[m], id, c + 1, &method)?;
            gt.push(g);
            est.push(e);
        }
        if members.len() >= 3 {
            for (k, slot) in tests.iter_mut().enumerate() {
                let a: Vec<f64> = est.iter().map(|r| r.values()[k]).collect();
                let b: Vec<f64> = gt.iter().map(|r| r.values()[k]).collect();
                *slot = Some(paired_ttest(&a, &b)?);
            }
        } else {
            log::warn!("cluster {} has {} members; t-tests skipped", c + 1, members.len());
        }
        records.extend(gt);
        records.extend(est);
        clusters.push(ClusterTests { cluster: c + 1, size: members.len(), tests });
    }
    Ok(ValidationResult { records, table: PValueTable { method, clusters }, sparse_clusters })
}
