//! Synthetic ensembles with analytic ground truth, and ensemble I/O.

mod appendage;
mod boxbump;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use appendage::{appendage_shape, gen_appendage, AppendageFamily, AppendageParams, AppendageShape, FAMILIES, OSTIUM_POINTS};
pub use boxbump::{box_bump_mesh, gen_box_bump, gen_box_bump_at, BoxBumpParams};

use crate::geometry::{RigidTransform, SignedDistanceVolume, TriangleMesh, Vec3};
use crate::shapestats::{read_points, write_points};
use crate::{Error, Result};

/// One surface plus an optional signed distance volume.
#[derive(Clone, Debug)]
pub struct ShapeSample {
    pub id: String,
    pub mesh: TriangleMesh,
    pub sdf: Option<SignedDistanceVolume>,
}

/// Ordered collection of shapes.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub samples: Vec<ShapeSample>,
    /// Set once preprocessing has put every sample in a shared frame.
    pub world_frame: bool,
    /// Generator parameters or source paths.
    pub provenance: serde_json::Value,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Writes `<id>.obj` per sample (plus `<id>.raw`/`<id>.json` volumes
    /// when present) and `ensemble.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for s in &self.samples {
            let path = dir.join(format!("{}.obj", s.id));
            s.mesh.write_obj(&path)?;
            written.push(path);
            if let Some(sdf) = &s.sdf {
                let raw = dir.join(format!("{}.raw", s.id));
                sdf.save(&raw)?;
                written.push(raw);
            }
        }
        let meta = serde_json::json!({
            "world_frame": self.world_frame,
            "provenance": self.provenance,
        });
        let path = dir.join("ensemble.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }
}

/// Loads every `*.obj` in `dir`, ordered by file name. A `<stem>.raw`
/// volume with its JSON sidecar is attached when present.
pub fn load_ensemble(dir: impl AsRef<Path>) -> Result<Ensemble> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidParameter(format!("{}: no OBJ meshes found", dir.display())));
    }
    let mut samples = Vec::with_capacity(paths.len());
    for path in &paths {
        let mesh = TriangleMesh::read_obj(path)?;
        mesh.check_watertight().map_err(|e| Error::InvalidMesh(format!("{}: {e}", path.display())))?;
        let id = path.file_stem().unwrap().to_string_lossy().into_owned();
        let raw = path.with_extension("raw");
        let sdf = if raw.exists() && raw.with_extension("json").exists() {
            Some(SignedDistanceVolume::load(&raw)?)
        } else {
            None
        };
        samples.push(ShapeSample { id, mesh, sdf });
    }
    let meta_path = dir.join("ensemble.json");
    let (world_frame, provenance) = match std::fs::read_to_string(&meta_path) {
        Ok(text) => {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            (v["world_frame"].as_bool().unwrap_or(false), v["provenance"].clone())
        }
        Err(_) => (
            false,
            serde_json::json!({ "source": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>() }),
        ),
    };
    Ok(Ensemble { samples, world_frame, provenance })
}

/// Known generative quantities of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub id: String,
    pub params: BTreeMap<String, f64>,
    /// 1-based family label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<usize>,
    /// Ordered ostium ring; stored in its own point file.
    #[serde(skip)]
    pub ostium: Option<Vec<Vec3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ostium_normal: Option<Vec3>,
    /// Normal of the reference (septum) plane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub septum_normal: Option<Vec3>,
}

impl SampleTruth {
    pub fn transformed(&self, xf: &RigidTransform) -> Self {
        Self {
            id: self.id.clone(),
            params: self.params.clone(),
            family: self.family,
            ostium: self.ostium.as_ref().map(|r| r.iter().map(|p| xf.apply(p)).collect()),
            ostium_normal: self.ostium_normal.map(|n| xf.apply_vector(&n)),
            septum_normal: self.septum_normal.map(|n| xf.apply_vector(&n)),
        }
    }
}

/// Ground truth for a generated ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub generator: String,
    pub samples: Vec<SampleTruth>,
}

impl GroundTruth {
    pub fn param(&self, name: &str) -> Option<Vec<f64>> {
        self.samples.iter().map(|s| s.params.get(name).copied()).collect()
    }

    /// 0-based family labels, if every sample has one.
    pub fn family_labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.family.map(|f| f - 1)).collect()
    }

    pub fn has_ostia(&self) -> bool {
        self.samples.iter().all(|s| s.ostium.is_some() && s.septum_normal.is_some())
    }

    /// Applies one transform per sample (e.g. the registration into the
    /// world frame).
    pub fn transformed(&self, transforms: &[RigidTransform]) -> Self {
        Self {
            generator: self.generator.clone(),
            samples: self.samples.iter().zip(transforms).map(|(s, xf)| s.transformed(xf)).collect(),
        }
    }

    /// Restricts to and reorders by the given ids.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let samples = ids
            .iter()
            .map(|id| {
                self.samples
                    .iter()
                    .find(|s| &s.id == id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter(format!("no ground truth for sample `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { generator: self.generator.clone(), samples })
    }

    /// `ground_truth.json` plus `<id>_ostium.txt` ring files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("ground_truth.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))?;
        for s in &self.samples {
            if let Some(ring) = &s.ostium {
                write_points(dir.join(format!("{}_ostium.txt", s.id)), ring)?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("ground_truth.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut gt: GroundTruth = serde_json::from_str(&text)?;
        for s in &mut gt.samples {
            let ring = dir.join(format!("{}_ostium.txt", s.id));
            if ring.exists() {
                s.ostium = Some(read_points(ring)?);
            }
        }
        Ok(gt)
    }
}

/// Per-sample random stream: the same for serial and parallel generation.
pub(crate) fn sample_rng(seed: u64, index: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}
