//! Model evaluation: compactness, generalization and specificity as
//! functions of the number of retained modes.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::best_rigid_fit;
use crate::shapestats::{build_pdm, flatten, procrustes_align, unflatten, CorrespondenceModel, Pdm};
use crate::{Error, Result};

/// Fraction of total variance in the first `k` modes.
pub fn compactness(pdm: &Pdm, k: usize) -> f64 {
    let total = pdm.total_variance();
    if total <= 0.0 {
        log::warn!("model has zero total variance; compactness defined as 1");
        return 1.0;
    }
    let k = k.min(pdm.num_modes());
    (pdm.eigenvalues[..k].iter().sum::<f64>() / total).min(1.0)
}

/// Mean Euclidean distance between corresponding points of two flattened
/// shapes.
pub fn mean_point_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let m = a.len() / 3;
    (0..m)
        .map(|i| (a.fixed_rows::<3>(3 * i) - b.fixed_rows::<3>(3 * i)).norm())
        .sum::<f64>()
        / m as f64
}

/// Leave-one-out reconstruction error (mm) with `k` modes. Each held-out
/// shape is rigidly aligned to its fold's mean before projection.
pub fn generalization(model: &CorrespondenceModel, k: usize) -> Result<f64> {
    let n = model.num_shapes();
    if n < 3 {
        return Err(Error::InvalidParameter("generalization needs at least 3 shapes".into()));
    }
    let mut total = 0.0;
    for held in 0..n {
        let rows: Vec<usize> = (0..n).filter(|&r| r != held).collect();
        let pdm = build_pdm(&model.select(&rows)?)?;
        let mean = unflatten(&pdm.mean)?;
        let (xf, _) = best_rigid_fit(model.shape(held), &mean)?;
        let aligned: Vec<_> = model.shape(held).iter().map(|p| xf.apply(p)).collect();
        let x = flatten(&aligned);
        let rec = pdm.reconstruct(&pdm.project(&x, k));
        total += mean_point_distance(&x, &rec);
    }
    Ok(total / n as f64)
}

/// Monte-Carlo specificity estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Specificity {
    /// Mean distance (mm) from a model sample to its nearest training shape.
    pub mean: f64,
    pub std_error: f64,
}

/// Draws `n_samples` shapes from the first `k` modes and averages their
/// distance to the nearest training shape. `model` must be in the PDM's
/// frame.
pub fn specificity(pdm: &Pdm, model: &CorrespondenceModel, k: usize, n_samples: usize, seed: u64) -> Result<Specificity> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("specificity needs at least one sample".into()));
    }
    let k = k.min(pdm.num_modes());
    let training: Vec<DVector<f64>> = (0..model.num_shapes()).map(|n| model.row(n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dists = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let b = DVector::from_iterator(
            k,
            pdm.eigenvalues[..k].iter().map(|&l| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * l.sqrt()
            }),
        );
        let shape = pdm.reconstruct(&b);
        let d = training
            .iter()
            .map(|t| mean_point_distance(&shape, t))
            .fold(f64::INFINITY, f64::min);
        dists.push(d);
    }
    let count = n_samples as f64;
    let mean = dists.iter().sum::<f64>() / count;
    let var = if n_samples > 1 {
        dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    Ok(Specificity { mean, std_error: (var / count).sqrt() })
}

/// All three metrics for K = 1..=k_max.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricCurves {
    pub method: String,
    pub k: Vec<usize>,
    pub compactness: Vec<f64>,
    pub generalization: Vec<f64>,
    pub specificity: Vec<f64>,
}

impl MetricCurves {
    pub fn at(&self, k: usize) -> Option<(f64, f64, f64)> {
        let i = self.k.iter().position(|&x| x == k)?;
        Some((self.compactness[i], self.generalization[i], self.specificity[i]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,compactness,generalization_mm,specificity_mm\n");
        for i in 0..self.k.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.k[i], self.compactness[i], self.generalization[i], self.specificity[i]
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(method: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut curves = Self {
            method: method.into(),
            k: vec![],
            compactness: vec![],
            generalization: vec![],
            specificity: vec![],
        };
        for (i, line) in text.lines().enumerate().skip(1) {
            let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(parse_err(format!("expected 4 columns, got {}", cols.len())));
            }
            curves.k.push(cols[0].parse().map_err(|e| parse_err(format!("{e}")))?);
            let f = |s: &str| s.parse::<f64>().map_err(|e| parse_err(format!("{e}")));
            curves.compactness.push(f(cols[1])?);
            curves.generalization.push(f(cols[2])?);
            curves.specificity.push(f(cols[3])?);
        }
        Ok(curves)
    }
}

/// Aligns the model, builds its PDM and evaluates every metric for
/// K = 1..=k_max (capped at the number of available modes).
pub fn evaluate_model(model: &CorrespondenceModel, k_max: usize, n_samples: usize, seed: u64) -> Result<(Pdm, MetricCurves)> {
    let aligned = procrustes_align(model)?.model;
    let pdm = build_pdm(&aligned)?;
    let k_max = k_max.min(pdm.num_modes()).max(1);
    let mut curves = MetricCurves {
        method: model.method().to_string(),
        k: vec![],
        compactness: vec![],
        generalization: vec![],
        specificity: vec![],
    };
    for k in 1..=k_max {
        curves.k.push(k);
        curves.compactness.push(compactness(&pdm, k));
        curves.generalization.push(generalization(&aligned, k)?);
        curves.specificity.push(specificity(&pdm, &aligned, k, n_samples, seed)?.mean);
    }
    Ok((pdm, curves))
}
