use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::geometry::{RigidTransform, Vec3};
use crate::{Error, Result};

/// N shapes × M corresponding points. Column `m` is the same locus on
/// every shape.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceModel {
    method: String,
    ids: Vec<String>,
    points: Vec<Vec<Vec3>>,
}

impl CorrespondenceModel {
    pub fn new(method: impl Into<String>, ids: Vec<String>, points: Vec<Vec<Vec3>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("correspondence model has no shapes".into()));
        }
        if ids.len() != points.len() {
            return Err(Error::InvalidParameter(format!("{} ids for {} shapes", ids.len(), points.len())));
        }
        let m = points[0].len();
        if m == 0 {
            return Err(Error::InvalidParameter("correspondence model has no points".into()));
        }
        for (n, row) in points.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidParameter(format!("shape {n} has {} points, expected {m}", row.len())));
            }
            if row.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
                return Err(Error::InvalidParameter(format!("shape {n} has non-finite points")));
            }
        }
        Ok(Self { method: method.into(), ids, points })
    }

    /// Rows given as flattened `[x0 y0 z0 x1 ...]` vectors.
    pub fn from_rows(method: impl Into<String>, ids: Vec<String>, rows: &[DVector<f64>]) -> Result<Self> {
        let points = rows.iter().map(|r| unflatten(r)).collect::<Result<Vec<_>>>()?;
        Self::new(method, ids, points)
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn points(&self) -> &[Vec<Vec3>] {
        &self.points
    }

    pub fn shape(&self, n: usize) -> &[Vec3] {
        &self.points[n]
    }

    pub fn num_shapes(&self) -> usize {
        self.points.len()
    }

    pub fn num_points(&self) -> usize {
        self.points[0].len()
    }

    pub fn row(&self, n: usize) -> DVector<f64> {
        flatten(&self.points[n])
    }

    /// N × dM data matrix.
    pub fn data_matrix(&self) -> DMatrix<f64> {
        let (n, d) = (self.num_shapes(), 3 * self.num_points());
        DMatrix::from_fn(n, d, |i, j| self.points[i][j / 3][j % 3])
    }

    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = method.into();
        self
    }

    /// Subset of shapes, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.method.clone(),
            rows.iter().map(|&r| self.ids[r].clone()).collect(),
            rows.iter().map(|&r| self.points[r].clone()).collect(),
        )
    }

    pub fn transformed(&self, xf: &RigidTransform) -> Self {
        Self {
            method: self.method.clone(),
            ids: self.ids.clone(),
            points: self
                .points
                .iter()
                .map(|row| row.iter().map(|p| xf.apply(p)).collect())
                .collect(),
        }
    }

    /// Largest per-point variance across shapes (mm²), i.e. the maximum
    /// over columns of the mean squared distance to the column mean.
    pub fn max_point_variance(&self) -> f64 {
        let n = self.num_shapes() as f64;
        (0..self.num_points())
            .map(|m| {
                // offsets from the first shape, so identical shapes give exactly 0
                let origin = self.points[0][m];
                let offset = self.points.iter().map(|r| r[m] - origin).sum::<Vec3>() / n;
                self.points.iter().map(|r| (r[m] - origin - offset).norm_squared()).sum::<f64>() / n
            })
            .fold(0.0, f64::max)
    }

    /// Writes one `<id>_world.particles` file per shape; returns the paths.
    pub fn write_particles(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.ids
            .iter()
            .zip(&self.points)
            .map(|(id, row)| {
                let path = dir.join(format!("{id}_world.particles"));
                write_points(&path, row)?;
                Ok(path)
            })
            .collect()
    }

    /// Reads `<id>_world.particles` files for the given ids.
    pub fn read_particles(method: impl Into<String>, dir: impl AsRef<Path>, ids: &[String]) -> Result<Self> {
        let dir = dir.as_ref();
        let points = ids
            .iter()
            .map(|id| read_points(dir.join(format!("{id}_world.particles"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(method, ids.to_vec(), points)
    }
}

pub fn flatten(points: &[Vec3]) -> DVector<f64> {
    DVector::from_iterator(3 * points.len(), points.iter().flat_map(|p| [p.x, p.y, p.z]))
}

pub fn unflatten(v: &DVector<f64>) -> Result<Vec<Vec3>> {
    if v.len() % 3 != 0 {
        return Err(Error::InvalidParameter(format!("vector length {} is not a multiple of 3", v.len())));
    }
    Ok((0..v.len() / 3).map(|m| Vec3::new(v[3 * m], v[3 * m + 1], v[3 * m + 2])).collect())
}

/// ASCII point file, one `x y z` per line.
pub fn write_points(path: impl AsRef<Path>, points: &[Vec3]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(points.len() * 64);
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<Vec3>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("{e}"),
            })?;
        if vals.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 coordinates, got {}", vals.len()),
            });
        }
        points.push(Vec3::new(vals[0], vals[1], vals[2]));
    }
    Ok(points)
}
