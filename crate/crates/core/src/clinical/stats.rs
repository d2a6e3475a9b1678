use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Two-tailed paired t-test result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// Set when the differences have zero variance but nonzero mean.
    pub degenerate: bool,
}

/// Two-tailed paired t-test on `a − b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "paired t-test needs two equal samples of size ≥ 2 (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if var <= (1e-14 * scale).powi(2) {
        return Ok(if mean.abs() <= 1e-14 * scale || mean == 0.0 {
            TTest { t: 0.0, p: 1.0, df, degenerate: false }
        } else {
            TTest { t: mean.signum() * f64::INFINITY, p: 0.0, df, degenerate: true }
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, df, degenerate: false })
}
