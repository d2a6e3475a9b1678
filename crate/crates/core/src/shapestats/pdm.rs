use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::CorrespondenceModel;
use crate::{Error, Result};

/// Point distribution model: mean shape and principal modes.
#[derive(Clone, Debug, PartialEq)]
pub struct Pdm {
    pub mean: DVector<f64>,
    /// Descending, non-negative (mm²).
    pub eigenvalues: Vec<f64>,
    /// dM × K, orthonormal columns.
    pub eigenvectors: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
struct PdmFile {
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Row-major dM × K.
    eigenvectors: Vec<f64>,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
}

/// PCA of the correspondence rows with divisor N − 1, computed from the
/// N × N Gram matrix of centred rows.
pub fn build_pdm(model: &CorrespondenceModel) -> Result<Pdm> {
    let n = model.num_shapes();
    if n < 2 {
        return Err(Error::InvalidParameter("a PDM needs at least two shapes".into()));
    }
    let x = model.data_matrix();
    let dm = x.ncols();
    let mean = DVector::from_iterator(dm, x.column_iter().map(|c| c.mean()));
    let mut y = x;
    for mut row in y.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n - 1) as f64;
    let gram = &y * y.transpose() / denom;
    let eig = SymmetricEigen::new(gram.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let k = (n - 1).min(dm);
    let top = eig.eigenvalues[order[0]].max(0.0);
    let cutoff = 1e-12 * top.max(f64::MIN_POSITIVE) + 1e-300;
    let mut eigenvalues = Vec::with_capacity(k);
    let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(k);
    for &o in order.iter().take(k) {
        let lambda = eig.eigenvalues[o];
        if lambda > cutoff && lambda > 1e-12 * gram.trace().abs() {
            let u = eig.eigenvectors.column(o);
            let mut v: DVector<f64> = y.transpose() * u;
            v /= v.norm();
            eigenvalues.push(lambda);
            vectors.push(v);
        } else {
            eigenvalues.push(0.0);
            vectors.push(complete_basis(&vectors, dm));
        }
    }
    for v in &mut vectors {
        fix_sign(v, &y);
    }
    let eigenvectors = if vectors.is_empty() {
        DMatrix::zeros(dm, 0)
    } else {
        DMatrix::from_columns(&vectors)
    };
    Ok(Pdm { mean, eigenvalues, eigenvectors, n, m: dm / 3 })
}

/// Unit vector orthogonal to `basis`, from Gram–Schmidt over the standard
/// basis in index order.
fn complete_basis(basis: &[DVector<f64>], dim: usize) -> DVector<f64> {
    for i in 0..dim {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let d = b.dot(&e);
                e.axpy(-d, b, 1.0);
            }
        }
        let norm = e.norm();
        if norm > 1e-6 {
            return e / norm;
        }
    }
    DVector::zeros(dim)
}

/// Positive third moment of the training scores `y·v`, which is
/// unaffected by rigid motion or reordering of the training set. Symmetric
/// score sets fall back to making the largest-magnitude entry positive
/// (first one on ties).
fn fix_sign(v: &mut DVector<f64>, y: &DMatrix<f64>) {
    let scores = y * &*v;
    let skew: f64 = scores.iter().map(|s| s * s * s).sum();
    let scale: f64 = scores.iter().map(|s| s.abs().powi(3)).sum();
    if skew.abs() > 1e-6 * scale {
        if skew < 0.0 {
            v.neg_mut();
        }
        return;
    }
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

impl Pdm {
    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Mode coordinates of a flattened shape on the first `k` modes.
    pub fn project(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        let k = k.min(self.num_modes());
        self.eigenvectors.columns(0, k).transpose() * (x - &self.mean)
    }

    /// Shape from mode coordinates (length ≤ K).
    pub fn reconstruct(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        let k = coeffs.len().min(self.num_modes());
        &self.mean + self.eigenvectors.columns(0, k) * coeffs.rows(0, k)
    }

    /// `mean + t·√λ_k·v_k` for 1-based mode `k`.
    pub fn sample_mode(&self, k: usize, t: f64) -> Result<DVector<f64>> {
        if k == 0 || k > self.num_modes() {
            return Err(Error::InvalidParameter(format!(
                "mode {k} out of range 1..={}",
                self.num_modes()
            )));
        }
        let lambda = self.eigenvalues[k - 1];
        if lambda == 0.0 && t != 0.0 {
            log::warn!("mode {k} has zero variance; returning the mean");
            return Ok(self.mean.clone());
        }
        Ok(&self.mean + t * lambda.sqrt() * self.eigenvectors.column(k - 1))
    }

    pub fn to_json(&self) -> Result<String> {
        let (rows, cols) = self.eigenvectors.shape();
        let file = PdmFile {
            mean: self.mean.iter().copied().collect(),
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: (0..rows)
                .flat_map(|r| (0..cols).map(move |c| (r, c)))
                .map(|(r, c)| self.eigenvectors[(r, c)])
                .collect(),
            n: self.n,
            m: self.m,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: PdmFile = serde_json::from_str(text)?;
        let dm = 3 * f.m;
        let k = f.eigenvalues.len();
        if f.mean.len() != dm || f.eigenvectors.len() != dm * k {
            return Err(Error::InvalidParameter("PDM JSON has inconsistent sizes".into()));
        }
        Ok(Self {
            mean: DVector::from_vec(f.mean),
            eigenvalues: f.eigenvalues,
            eigenvectors: DMatrix::from_row_slice(dm, k, &f.eigenvectors),
            n: f.n,
            m: f.m,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
