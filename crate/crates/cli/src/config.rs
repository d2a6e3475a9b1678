//! Experiment configuration: one JSON document per run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapebench::deform::DeformConfig;
use shapebench::ensembles::{AppendageParams, BoxBumpParams};
use shapebench::particles::PbmConfig;
use shapebench::spherical::SpharmConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnsembleSource {
    BoxBump {
        n: usize,
        seed: u64,
        #[serde(default)]
        params: BoxBumpParams,
    },
    Appendage {
        n: usize,
        seed: u64,
        #[serde(default)]
        params: AppendageParams,
    },
    /// OBJ meshes on disk; a `ground_truth.json` next to them is picked up.
    Directory { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Rigidly register every sample onto the first one.
    pub register: bool,
    /// Distance volume spacing (mm); defaults to 1/80 of the ensemble
    /// bounding-box diagonal.
    pub spacing: Option<f64>,
    /// Volume padding around each mesh, in voxels.
    pub padding: f64,
    /// Padding of the shared crop box, in voxels.
    pub crop_padding: f64,
    /// Narrow-band smoothing iterations.
    pub smoothing: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { register: true, spacing: None, padding: 3.0, crop_padding: 2.0, smoothing: 0 }
    }
}

fn one() -> u64 {
    1
}

fn default_points() -> usize {
    256
}

fn default_level() -> u32 {
    3
}

fn default_template_spacing() -> f64 {
    0.07
}

/// One correspondence method ("arm") of the comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodConfig {
    Particles {
        #[serde(default)]
        config: PbmConfig,
        #[serde(default = "one")]
        seed: u64,
    },
    Spherical {
        #[serde(default)]
        config: SpharmConfig,
    },
    DeformSphereAtlas {
        #[serde(default)]
        config: DeformConfig,
        /// Icosphere subdivision level of the template.
        #[serde(default = "default_level")]
        level: u32,
        /// Correspondence points sampled from the template.
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "one")]
        seed: u64,
    },
    DeformMeanAtlas {
        #[serde(default)]
        config: DeformConfig,
        /// Grid spacing of the averaged distance field, as a fraction of
        /// the ensemble diagonal.
        #[serde(default = "default_template_spacing")]
        template_spacing: f64,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "one")]
        seed: u64,
    },
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Particles { .. } => "particles",
            Self::Spherical { .. } => "spherical",
            Self::DeformSphereAtlas { .. } => "deform-sphere-atlas",
            Self::DeformMeanAtlas { .. } => "deform-mean-atlas",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Particles { seed, .. } | Self::DeformSphereAtlas { seed, .. } | Self::DeformMeanAtlas { seed, .. } => {
                Some(*seed)
            }
            Self::Spherical { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub k_max: usize,
    pub specificity_samples: usize,
    pub seed: u64,
    /// Modes exported as walks, and the walk positions in standard
    /// deviations.
    pub walk_modes: usize,
    pub walk_std: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { k_max: 5, specificity_samples: 1000, seed: 7, walk_modes: 3, walk_std: vec![-3.0, 0.0, 3.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self { k: 4, restarts: 10, seed: 1 }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleSource,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    /// Run the measurement pipeline when ground-truth ostia exist.
    #[serde(default = "yes")]
    pub validation: bool,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok((Self::parse(&text, path)?, text))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(CliError::Config("at least one method is required".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m.name()) {
                return Err(CliError::Config(format!("method `{}` is listed twice", m.name())));
            }
        }
        match &self.ensemble {
            EnsembleSource::BoxBump { n, .. } | EnsembleSource::Appendage { n, .. } if *n < 2 => {
                return Err(CliError::Config(format!("an ensemble needs at least 2 samples, got {n}")));
            }
            EnsembleSource::Directory { path } if !path.is_dir() => {
                return Err(CliError::Config(format!("input directory {} does not exist", path.display())));
            }
            _ => {}
        }
        if self.metrics.k_max == 0 || self.metrics.specificity_samples == 0 {
            return Err(CliError::Config("k_max and specificity_samples must be at least 1".into()));
        }
        if self.clustering.k == 0 || self.clustering.restarts == 0 {
            return Err(CliError::Config("clustering k and restarts must be at least 1".into()));
        }
        if let Some(h) = self.preprocess.spacing {
            if !(h > 0.0) {
                return Err(CliError::Config(format!("volume spacing must be positive, got {h}")));
            }
        }
        Ok(())
    }

    /// Every seed the run consumes, by role.
    pub fn seeds(&self) -> Vec<(String, u64)> {
        let mut seeds = Vec::new();
        if let EnsembleSource::BoxBump { seed, .. } | EnsembleSource::Appendage { seed, .. } = &self.ensemble {
            seeds.push(("ensemble".to_string(), *seed));
        }
        for m in &self.methods {
            if let Some(s) = m.seed() {
                seeds.push((m.name().to_string(), s));
            }
        }
        seeds.push(("specificity".to_string(), self.metrics.seed));
        seeds.push(("clustering".to_string(), self.clustering.seed));
        seeds
    }
}

/// Lower-case hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
