//! Pipeline stages. Each stage reads its inputs from the run directory and
//! writes its outputs there, so stages can be re-run independently.
//!
//! ```text
//! <run>/config.json
//! <run>/ensemble/            registered meshes, ground truth, registration.csv
//! <run>/methods/<name>/      correspondences/, trace.csv, metrics.csv, pdm.json,
//!                            mode_walk/, clusters.csv, measurements.csv, pvalues.csv
//! <run>/pvalue_table.csv, summary.csv, report.json
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, RowDVector};
use shapebench::clinical::{kmeans, measurements_csv, validate_method, ClusterAssignment, ValidationTruth};
use shapebench::deform::{correspond_deform, ensemble_diagonal, estimate_atlas, mean_template, sphere_template};
use shapebench::ensembles::{gen_appendage, gen_box_bump, load_ensemble, Ensemble, GroundTruth};
use shapebench::geometry::{crop_to_common_box, mesh_to_sdf, rigid_register, smooth_sdf, RigidTransform};
use shapebench::metrics::evaluate_model;
use shapebench::particles::optimize;
use shapebench::shapestats::{procrustes_align, unflatten, write_points, CorrespondenceModel};
use shapebench::spherical::correspond_spherical;
use shapebench::Vec3;

use crate::config::{EnsembleSource, ExperimentConfig, MethodConfig, PreprocessConfig};
use crate::error::{CliError, Result};

pub const STAGES: [&str; 4] = ["generate", "correspond", "evaluate", "validate"];

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn ensemble(&self) -> PathBuf {
        self.root.join("ensemble")
    }

    pub fn method(&self, name: &str) -> PathBuf {
        self.root.join("methods").join(name)
    }

    pub fn correspondences(&self, name: &str) -> PathBuf {
        self.method(name).join("correspondences")
    }

    fn error_file(&self, name: &str, stage: &str) -> PathBuf {
        self.method(name).join(format!("{stage}.error"))
    }

    /// Ground truth of the registered ensemble, if the source had any.
    pub fn ground_truth(&self) -> Result<Option<GroundTruth>> {
        if self.ensemble().join("ground_truth.json").exists() {
            Ok(Some(GroundTruth::load(self.ensemble())?))
        } else {
            Ok(None)
        }
    }
}

fn write(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// A per-method failure that did not stop the other methods.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodFailure {
    pub method: String,
    pub stage: String,
    pub message: String,
}

/// Runs `f` for every method, recording failures in `<stage>.error` files
/// instead of aborting.
fn per_method(
    run: &RunDir,
    config: &ExperimentConfig,
    stage: &str,
    mut f: impl FnMut(&MethodConfig) -> Result<()>,
) -> Result<Vec<MethodFailure>> {
    let mut failures = Vec::new();
    for m in &config.methods {
        let name = m.name();
        let err_path = run.error_file(name, stage);
        if err_path.exists() {
            std::fs::remove_file(&err_path).map_err(|e| CliError::io(&err_path, e))?;
        }
        if let Some(prev) = STAGES.iter().take_while(|&&s| s != stage).find(|s| run.error_file(name, s).exists()) {
            log::warn!("{name}: skipping {stage}, {prev} failed");
            continue;
        }
        log::info!("{stage}: {name}");
        if let Err(e) = f(m) {
            log::error!("{name}: {stage} failed: {e}");
            write(&err_path, &format!("{e}\n"))?;
            failures.push(MethodFailure { method: name.to_string(), stage: stage.to_string(), message: e.to_string() });
        }
    }
    Ok(failures)
}

/// Generator parameters come straight from the config.
fn config_error(e: shapebench::Error) -> CliError {
    match e {
        shapebench::Error::InvalidParameter(m) => CliError::Config(m),
        e => e.into(),
    }
}

/// Builds or loads the ensemble, registers it into the frame of its first
/// sample and writes it with its ground truth.
pub fn generate(run: &RunDir, config: &ExperimentConfig, config_text: &str) -> Result<()> {
    write(run.config(), config_text)?;
    let (mut ensemble, truth) = match &config.ensemble {
        EnsembleSource::BoxBump { n, seed, params } => {
            let (e, t) = gen_box_bump(*n, *seed, params).map_err(config_error)?;
            (e, Some(t))
        }
        EnsembleSource::Appendage { n, seed, params } => {
            let (e, t) = gen_appendage(*n, *seed, params).map_err(config_error)?;
            (e, Some(t))
        }
        EnsembleSource::Directory { path } => {
            let e = load_ensemble(path)?;
            let t = if path.join("ground_truth.json").exists() {
                Some(GroundTruth::load(path)?.select(&e.ids())?)
            } else {
                None
            };
            (e, t)
        }
    };
    let mut csv = String::from("sample_id,residual_mm2,iterations,converged\n");
    let mut transforms = Vec::with_capacity(ensemble.len());
    if config.preprocess.register {
        let reference = ensemble.samples[0].mesh.clone();
        for (i, s) in ensemble.samples.iter_mut().enumerate() {
            if i == 0 {
                transforms.push(RigidTransform::identity());
                let _ = writeln!(csv, "{},0,0,true", s.id);
                continue;
            }
            let r = rigid_register(&s.mesh, &reference)?;
            s.mesh = s.mesh.transformed(&r.transform);
            let _ = writeln!(csv, "{},{},{},{}", s.id, r.residual, r.iterations, r.converged);
            transforms.push(r.transform);
        }
    }
    ensemble.world_frame = true;
    let dir = run.ensemble();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    ensemble.save(&dir)?;
    write(dir.join("registration.csv"), &csv)?;
    if let Some(t) = truth {
        let t = if config.preprocess.register { t.transformed(&transforms) } else { t };
        t.save(&dir)?;
    }
    Ok(())
}

/// Distance volumes on a shared grid, for the particle method.
pub fn attach_volumes(ensemble: &mut Ensemble, p: &PreprocessConfig) -> Result<()> {
    let h = p.spacing.unwrap_or_else(|| ensemble_diagonal(ensemble) / 80.0);
    let mut volumes = Vec::with_capacity(ensemble.len());
    for s in &ensemble.samples {
        let v = mesh_to_sdf(&s.mesh, h, p.padding * h)?;
        volumes.push(if p.smoothing > 0 { smooth_sdf(&v, p.smoothing) } else { v });
    }
    let volumes = crop_to_common_box(&volumes, &ensemble.ids(), p.crop_padding * h)?;
    for (s, v) in ensemble.samples.iter_mut().zip(volumes) {
        s.sdf = Some(v);
    }
    Ok(())
}

fn load_registered(run: &RunDir) -> Result<Ensemble> {
    Ok(load_ensemble(run.ensemble())?)
}

/// Runs every correspondence method on the registered ensemble.
pub fn correspond(run: &RunDir, config: &ExperimentConfig) -> Result<Vec<MethodFailure>> {
    let mut ensemble = load_registered(run)?;
    if config.methods.iter().any(|m| matches!(m, MethodConfig::Particles { .. })) {
        attach_volumes(&mut ensemble, &config.preprocess)?;
    }
    per_method(run, config, "correspond", |m| {
        let name = m.name();
        let dir = run.method(name);
        let model = match m {
            MethodConfig::Particles { config, seed } => {
                let r = optimize(&ensemble, config, *seed)?;
                write(dir.join("trace.csv"), &r.trace_csv())?;
                r.model
            }
            MethodConfig::Spherical { config } => {
                let r = correspond_spherical(&ensemble, config)?;
                let mut csv = String::from("sample_id,area_distortion,residual_rms_mm,axis_1,axis_2,axis_3,ambiguous\n");
                for s in &r.reports {
                    let [a, b, c] = s.axis_lengths;
                    let _ = writeln!(csv, "{},{},{},{a},{b},{c},{}", s.id, s.area_distortion, s.residual_rms, s.ambiguous);
                }
                write(dir.join("spherical.csv"), &csv)?;
                r.model
            }
            MethodConfig::DeformSphereAtlas { config, level, points, seed } => {
                let template = sphere_template(&ensemble, *level)?;
                deform_arm(&ensemble, &template, config, *points, *seed, &dir)?
            }
            MethodConfig::DeformMeanAtlas { config, template_spacing, points, seed } => {
                let template = mean_template(&ensemble, template_spacing * ensemble_diagonal(&ensemble))?;
                deform_arm(&ensemble, &template, config, *points, *seed, &dir)?
            }
        };
        let out = run.correspondences(name);
        if out.exists() {
            std::fs::remove_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        }
        model.with_method(name).write_particles(&out)?;
        Ok(())
    })
}

fn deform_arm(
    ensemble: &Ensemble,
    template: &shapebench::geometry::TriangleMesh,
    config: &shapebench::deform::DeformConfig,
    points: usize,
    seed: u64,
    dir: &Path,
) -> Result<CorrespondenceModel> {
    let atlas = estimate_atlas(ensemble, template, config)?;
    write(dir.join("trace.csv"), &atlas.trace_csv())?;
    atlas.template.write_obj(dir.join("template.obj"))?;
    Ok(correspond_deform(&atlas, points, seed)?)
}

pub fn load_model(run: &RunDir, name: &str) -> Result<CorrespondenceModel> {
    let ids = load_registered_ids(run)?;
    Ok(CorrespondenceModel::read_particles(name, run.correspondences(name), &ids)?)
}

fn load_registered_ids(run: &RunDir) -> Result<Vec<String>> {
    let dir = run.ensemble();
    let mut ids: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    Ok(ids)
}

/// File name of a mode walk, e.g. `mode1_-3.txt`.
pub fn walk_name(mode: usize, t: f64) -> String {
    format!("mode{mode}_{t:+}.txt")
}

/// Metric curves, PDM, mode walks and k-means clustering per method.
pub fn evaluate(run: &RunDir, config: &ExperimentConfig) -> Result<Vec<MethodFailure>> {
    let mc = &config.metrics;
    let cc = &config.clustering;
    per_method(run, config, "evaluate", |m| {
        let name = m.name();
        let dir = run.method(name);
        let model = load_model(run, name)?;
        let (pdm, curves) = evaluate_model(&model, mc.k_max, mc.specificity_samples, mc.seed)?;
        curves.write_csv(dir.join("metrics.csv"))?;
        pdm.save(dir.join("pdm.json"))?;
        let walks = dir.join("mode_walk");
        if walks.exists() {
            std::fs::remove_dir_all(&walks).map_err(|e| CliError::io(&walks, e))?;
        }
        std::fs::create_dir_all(&walks).map_err(|e| CliError::io(&walks, e))?;
        for k in 1..=mc.walk_modes.min(pdm.num_modes()) {
            for &t in &mc.walk_std {
                write_points(walks.join(walk_name(k, t)), &unflatten(&pdm.sample_mode(k, t)?)?)?;
            }
        }
        let clusters = dir.join("clusters.csv");
        if cc.k <= model.num_shapes() {
            let aligned = procrustes_align(&model)?.model;
            let a = kmeans(&aligned.data_matrix(), cc.k, cc.seed, cc.restarts)?;
            let mut csv = String::from("sample_id,cluster\n");
            for (id, l) in model.ids().iter().zip(&a.labels) {
                let _ = writeln!(csv, "{id},{}", l + 1);
            }
            write(&clusters, &csv)?;
        } else {
            log::warn!("{name}: {} shapes, fewer than k = {}; clustering skipped", model.num_shapes(), cc.k);
            if clusters.exists() {
                std::fs::remove_file(&clusters).map_err(|e| CliError::io(&clusters, e))?;
            }
        }
        Ok(())
    })
}

/// 0-based labels from `clusters.csv`, in model row order.
pub fn read_clusters(path: impl AsRef<Path>, ids: &[String]) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut labels = vec![None; ids.len()];
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || CliError::Stage { stage: "validate".into(), message: format!("{}:{}: malformed row", path.display(), i + 1) };
        let (id, label) = line.split_once(',').ok_or_else(bad)?;
        let label: usize = label.trim().parse().map_err(|_| bad())?;
        let row = ids.iter().position(|x| x == id).ok_or_else(bad)?;
        labels[row] = Some(label.checked_sub(1).ok_or_else(bad)?);
    }
    labels.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| CliError::Stage {
        stage: "validate".into(),
        message: format!("{}: not every sample has a cluster", path.display()),
    })
}

fn assignment_from_labels(model: &CorrespondenceModel, labels: Vec<usize>, k: usize) -> ClusterAssignment {
    let data = procrustes_align(model).map(|a| a.model.data_matrix()).unwrap_or_else(|_| model.data_matrix());
    let mut centers = DMatrix::zeros(k, data.ncols());
    let mut inertia = 0.0;
    for c in 0..k {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let mean = rows.iter().fold(RowDVector::zeros(data.ncols()), |acc, &i| acc + data.row(i)) / rows.len() as f64;
        inertia += rows.iter().map(|&i| (data.row(i) - &mean).norm_squared()).sum::<f64>();
        centers.set_row(c, &mean);
    }
    ClusterAssignment { labels, centers, inertia }
}

/// Measurement pipeline against ground-truth ostia. Returns no failures
/// and writes nothing when validation is off or there are no ostia.
pub fn validate(run: &RunDir, config: &ExperimentConfig) -> Result<Vec<MethodFailure>> {
    let table = run.root.join("pvalue_table.csv");
    if table.exists() {
        std::fs::remove_file(&table).map_err(|e| CliError::io(&table, e))?;
    }
    if !config.validation {
        return Ok(Vec::new());
    }
    let truth = match run.ground_truth()? {
        Some(t) if t.has_ostia() => t,
        _ => {
            log::info!("no ground-truth ostia; validation skipped");
            return Ok(Vec::new());
        }
    };
    let rings: Vec<Vec<Vec3>> = truth.samples.iter().map(|s| s.ostium.clone().unwrap()).collect();
    let normals: Vec<Vec3> = truth.samples.iter().map(|s| s.septum_normal.unwrap()).collect();
    let k = config.clustering.k;
    let mut rows: Vec<(String, String)> = Vec::new();
    let failures = per_method(run, config, "validate", |m| {
        let name = m.name();
        let dir = run.method(name);
        let model = load_model(run, name)?;
        if truth.samples.iter().map(|s| &s.id).ne(model.ids().iter()) {
            return Err(CliError::Stage { stage: "validate".into(), message: "ground truth and model ids differ".into() });
        }
        let labels = read_clusters(dir.join("clusters.csv"), model.ids())?;
        let assignment = assignment_from_labels(&model, labels, k);
        let result = validate_method(&model, ValidationTruth { rings: &rings, septum_normals: &normals }, &assignment)?;
        write(dir.join("measurements.csv"), &measurements_csv(&result.records))?;
        let csv = result.table.to_csv();
        write(dir.join("pvalues.csv"), &csv)?;
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default().split_once(',').map(|(_, h)| h.to_string()).unwrap_or_default();
        for line in lines {
            if let Some((measurement, cells)) = line.split_once(',') {
                rows.push((header.clone(), format!("{name} vs ground truth: {measurement},{cells}")));
            }
        }
        if !result.sparse_clusters.is_empty() {
            log::warn!("{name}: sparse correspondence coverage near the ostium in clusters {:?}", result.sparse_clusters);
        }
        Ok(())
    })?;
    if let Some((header, _)) = rows.first() {
        let mut out = format!("comparison,{header}\n");
        for (_, row) in &rows {
            out.push_str(row);
            out.push('\n');
        }
        write(&table, &out)?;
    }
    Ok(failures)
}

/// Collects the `<stage>.error` files of every method.
pub fn recorded_failures(run: &RunDir, config: &ExperimentConfig) -> Vec<MethodFailure> {
    let mut out = Vec::new();
    for m in &config.methods {
        for stage in STAGES {
            if let Ok(message) = std::fs::read_to_string(run.error_file(m.name(), stage)) {
                out.push(MethodFailure { method: m.name().into(), stage: stage.into(), message: message.trim().into() });
            }
        }
    }
    out
}
