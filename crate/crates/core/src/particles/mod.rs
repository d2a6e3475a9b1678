//! Groupwise particle correspondence: particles on every shape's zero level
//! set minimise `Q = H(Z) + w Σₙ Sₙ`, the ensemble entropy of the stacked
//! particle vectors plus a Parzen repulsion term per shape.

mod entropy;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use entropy::ensemble_curvature;
pub use entropy::{ensemble_entropy, ensemble_entropy_with_gradient, sampling_entropy, sampling_entropy_with_gradient};

use crate::ensembles::Ensemble;
use crate::geometry::{project_to_surface, SignedDistanceVolume, TriangleBvh, Vec3};
use crate::shapestats::CorrespondenceModel;
use crate::{Error, Result};

/// Consecutive non-decreasing accepted steps tolerated before aborting.
const DIVERGENCE_STEPS: usize = 10;
const MAX_BACKTRACKS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PbmConfig {
    /// Particles per shape; a power of two.
    pub particles: usize,
    /// Iterations at each intermediate split level.
    pub iterations: usize,
    /// Iterations once the full particle count is reached.
    pub final_iterations: usize,
    /// Weight of the sampling term relative to the ensemble entropy.
    pub sampling_weight: f64,
    /// Sampling weight used below the full particle count.
    pub split_sampling_weight: f64,
    /// Final α = (alpha_fraction · particle spacing)², so it halves at every
    /// split.
    pub alpha_fraction: f64,
    /// Within a level α decays geometrically from
    /// (initial_alpha_fraction · particle spacing)² to its final value.
    pub initial_alpha_fraction: f64,
    /// Split offset as a fraction of the current particle spacing.
    pub split_offset: f64,
    /// After the final level, re-seed every shape from the particles of
    /// the most typical shape and optimise again.
    pub reanchor: bool,
}

impl Default for PbmConfig {
    fn default() -> Self {
        Self {
            particles: 128,
            iterations: 40,
            final_iterations: 150,
            sampling_weight: 3.0,
            split_sampling_weight: 0.3,
            alpha_fraction: 1.0,
            initial_alpha_fraction: 3.0,
            split_offset: 0.2,
            reanchor: true,
        }
    }
}

impl PbmConfig {
    fn validate(&self) -> Result<()> {
        if !self.particles.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("particle count {} is not a power of two", self.particles)));
        }
        if !(self.sampling_weight >= 0.0 && self.split_sampling_weight >= 0.0 && self.alpha_fraction > 0.0 && self.initial_alpha_fraction >= self.alpha_fraction && self.split_offset > 0.0) {
            return Err(Error::InvalidParameter("particle weights and offsets must be positive".into()));
        }
        Ok(())
    }
}

/// One accepted optimisation step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PbmIteration {
    pub level: usize,
    /// 1 for the pass that follows re-anchoring.
    pub pass: usize,
    pub particles: usize,
    pub iteration: usize,
    pub ensemble_entropy: f64,
    pub sampling_entropy: f64,
    pub objective: f64,
}

/// Particles on each shape; index m is the same anatomical locus on every
/// shape. Shapes are held in id order.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    ids: Vec<String>,
    /// Position of each shape in the caller's ensemble.
    order: Vec<usize>,
    sdfs: Vec<SignedDistanceVolume>,
    bvhs: Vec<TriangleBvh>,
    areas: Vec<f64>,
    positions: Vec<Vec<Vec3>>,
    seed: u64,
}

impl ParticleSystem {
    pub fn num_particles(&self) -> usize {
        self.positions[0].len()
    }

    /// Positions in the caller's sample order.
    pub fn positions(&self) -> Vec<Vec<Vec3>> {
        let mut out = vec![Vec::new(); self.positions.len()];
        for (row, &orig) in self.positions.iter().zip(&self.order) {
            out[orig] = row.clone();
        }
        out
    }

    pub fn to_model(&self) -> Result<CorrespondenceModel> {
        let mut ids = vec![String::new(); self.ids.len()];
        for (id, &orig) in self.ids.iter().zip(&self.order) {
            ids[orig] = id.clone();
        }
        CorrespondenceModel::new("particles", ids, self.positions())
    }

    /// Ideal spacing of `m` particles on shape `n`.
    fn spacing(&self, n: usize, m: usize) -> f64 {
        (self.areas[n] / m as f64).sqrt()
    }

    fn voxel(&self) -> f64 {
        self.sdfs[0].spacing()
    }

    /// α = (fraction · mean particle spacing)².
    fn alpha(&self, fraction: f64) -> f64 {
        let mean_area = self.areas.iter().sum::<f64>() / self.areas.len() as f64;
        fraction.powi(2) * mean_area / self.num_particles() as f64
    }

    /// Sampling weight per term: the Parzen entropy is an average over the
    /// shape's particles.
    fn sampling_weight(&self, config: &PbmConfig) -> f64 {
        let w = if self.num_particles() < config.particles {
            config.split_sampling_weight
        } else {
            config.sampling_weight
        };
        w / self.num_particles() as f64
    }

    /// Projects onto shape `n`, reseeding at a random surface point when
    /// the projection fails. The reseed stream is keyed on the failed
    /// point, so identical shapes stay identical.
    fn project(&self, n: usize, p: &Vec3) -> Vec3 {
        if let Ok(q) = project_to_surface(p, &self.sdfs[n]) {
            return q;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(p.iter().fold(0xcbf2_9ce4_8422_2325, |h: u64, c| (h ^ c.to_bits()).wrapping_mul(0x0100_0000_01b3)));
        loop {
            let hint = self.bvhs[n].closest_point(&Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).2;
            let jitter = Vec3::from_fn(|_, _| rng.gen_range(-0.5..0.5)) * self.voxel();
            if let Ok(q) = project_to_surface(&(hint + jitter), &self.sdfs[n]) {
                log::debug!("reseeded a particle on `{}`", self.ids[n]);
                return q;
            }
        }
    }

    fn objective(&self, positions: &[Vec<Vec3>], config: &PbmConfig, alpha: f64) -> (f64, f64, f64) {
        let h = ensemble_entropy(positions, alpha);
        let m = positions[0].len();
        let s: f64 = positions
            .iter()
            .enumerate()
            .map(|(n, row)| sampling_entropy(row, self.spacing(n, m)))
            .sum();
        (h, s, h + self.sampling_weight(config) * s)
    }

    /// Surface-tangent gradient of Q for every particle, divided by a
    /// per-particle curvature estimate of both terms. Any positive scaling
    /// keeps it a descent direction.
    fn direction(&self, config: &PbmConfig, alpha: f64) -> Vec<Vec<Vec3>> {
        let m = self.num_particles();
        let (_, mut grad) = ensemble_entropy_with_gradient(&self.positions, alpha);
        let curvature = ensemble_curvature(&self.positions, alpha);
        for (n, row) in self.positions.iter().enumerate() {
            let sigma = self.spacing(n, m);
            let (_, gs) = sampling_entropy_with_gradient(row, sigma);
            let w = self.sampling_weight(config);
            let stiffness = curvature[n] + w * if m > 1 { 2.0 / (sigma * sigma) } else { 0.0 };
            for (j, g) in grad[n].iter_mut().enumerate() {
                *g += w * gs[j];
                let normal = self.sdfs[n].normal(&row[j]);
                *g -= g.dot(&normal) * normal;
                if stiffness > 0.0 {
                    *g /= stiffness;
                }
            }
        }
        grad
    }

    /// Doubles the particle count: each particle moves `offset` along a
    /// random tangent direction and its copy the opposite way. The direction
    /// is shared by all shapes so correspondence is preserved.
    fn split(&mut self, level: usize, offset: f64) {
        let m = self.num_particles();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + level as u64);
        let dirs: Vec<Vec3> = (0..m)
            .map(|_| loop {
                let d = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let len = d.norm();
                if len > 1e-3 && len <= 1.0 {
                    break d / len;
                }
            })
            .collect();
        for n in 0..self.positions.len() {
            let delta = offset * self.spacing(n, m);
            let row = self.positions[n].clone();
            let mut plus = Vec::with_capacity(m);
            let mut minus = Vec::with_capacity(m);
            for (p, d) in row.iter().zip(&dirs) {
                let normal = self.sdfs[n].normal(p);
                let mut t = d - d.dot(&normal) * normal;
                if t.norm() < 1e-6 {
                    t = normal.cross(&Vec3::x());
                    if t.norm() < 1e-6 {
                        t = normal.cross(&Vec3::y());
                    }
                }
                let t = t.normalize();
                plus.push(self.project(n, &(p + delta * t)));
                minus.push(self.project(n, &(p - delta * t)));
            }
            plus.extend(minus);
            self.positions[n] = plus;
        }
    }

    /// Copies the particles of the shape closest to the ensemble mean onto
    /// every shape, itself included, by surface projection.
    fn reanchor(&mut self, config: &PbmConfig, level: usize) {
        let n = self.positions.len();
        let m = self.num_particles();
        let mean: Vec<Vec3> = (0..m).map(|j| self.positions.iter().map(|r| r[j]).sum::<Vec3>() / n as f64).collect();
        let dist = |row: &Vec<Vec3>| row.iter().zip(&mean).map(|(p, q)| (p - q).norm_squared()).sum::<f64>();
        let medoid = (0..n)
            .min_by(|&a, &b| dist(&self.positions[a]).total_cmp(&dist(&self.positions[b])))
            .unwrap();
        let mut single = ParticleSystem {
            ids: vec![self.ids[medoid].clone()],
            order: vec![0],
            sdfs: vec![self.sdfs[medoid].clone()],
            bvhs: vec![self.bvhs[medoid].clone()],
            areas: vec![self.areas[medoid]],
            positions: vec![self.positions[medoid].clone()],
            seed: self.seed,
        };
        let mut scratch = Vec::new();
        let _ = single.descend(config, level, config.final_iterations, &mut scratch);
        let template = single.positions.remove(0);
        for k in 0..n {
            self.positions[k] = template
                .iter()
                .map(|p| {
                    let start = self.bvhs[k].closest_point(p).2;
                    self.project(k, &start)
                })
                .collect();
        }
    }

    /// Projected gradient descent with backtracking at a fixed particle
    /// count. Appends accepted steps to `trace`.
    fn descend(&mut self, config: &PbmConfig, level: usize, iterations: usize, trace: &mut Vec<PbmIteration>) -> Result<()> {
        let m = self.num_particles();
        let (start, end) = (self.alpha(config.initial_alpha_fraction), self.alpha(config.alpha_fraction));
        let anneal = (2 * iterations / 3).max(1);
        let mut alpha = start;
        let cap = 0.5 * (0..self.positions.len()).map(|n| self.spacing(n, m)).fold(f64::INFINITY, f64::min);
        let mut q = self.objective(&self.positions, config, alpha).2;
        let mut eta: Option<f64> = None;
        let mut rising = 0;
        let mut recent: Vec<f64> = vec![q];
        for iteration in 0..iterations {
            if iteration > 0 && alpha > end {
                // lowering α at fixed positions can only lower Q
                alpha = (start * (end / start).powf(iteration as f64 / anneal as f64)).max(end);
                q = self.objective(&self.positions, config, alpha).2;
            }
            let grad = self.direction(config, alpha);
            let gmax = grad.iter().flatten().map(|g| g.norm()).fold(0.0, f64::max);
            if !(gmax > 0.0) {
                break;
            }
            let mut step = eta.unwrap_or(1.0f64.min(cap / gmax));
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial = self.positions.clone();
                for n in 0..trial.len() {
                    for j in 0..m {
                        let mut d = step * grad[n][j];
                        let len = d.norm();
                        if len > cap {
                            d *= cap / len;
                        }
                        trial[n][j] = self.project(n, &(self.positions[n][j] - d));
                    }
                }
                let (th, ts, tq) = self.objective(&trial, config, alpha);
                if !tq.is_finite() {
                    recent.push(tq);
                    return Err(Error::Divergence { trace: recent });
                }
                if tq <= q {
                    accepted = Some((trial, th, ts, tq));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, th, ts, tq)) = accepted else {
                break;
            };
            rising = if tq > q { rising + 1 } else { 0 };
            if rising >= DIVERGENCE_STEPS {
                return Err(Error::Divergence { trace: recent });
            }
            let moved = (q - tq).abs();
            self.positions = trial;
            q = tq;
            recent.push(q);
            eta = Some(step * 1.5);
            trace.push(PbmIteration {
                level,
                pass: 0,
                particles: m,
                iteration,
                ensemble_entropy: th,
                sampling_entropy: ts,
                objective: q,
            });
            if alpha <= end && moved <= 1e-12 * q.abs().max(1.0) {
                break;
            }
        }
        Ok(())
    }
}

/// One particle per shape, seeded at the surface point nearest the mean of
/// all surface centroids. Shapes are processed in id order; every sample needs
/// a signed distance volume.
pub fn initialize_particles(ensemble: &Ensemble, seed: u64) -> Result<ParticleSystem> {
    if ensemble.is_empty() {
        return Err(Error::InvalidParameter("ensemble is empty".into()));
    }
    let mut order: Vec<usize> = (0..ensemble.len()).collect();
    order.sort_by(|&a, &b| ensemble.samples[a].id.cmp(&ensemble.samples[b].id));
    let mut sdfs = Vec::new();
    let mut bvhs = Vec::new();
    let mut areas = Vec::new();
    let mut ids = Vec::new();
    for &i in &order {
        let s = &ensemble.samples[i];
        let sdf = s
            .sdf
            .clone()
            .ok_or_else(|| Error::InvalidParameter(format!("sample `{}` has no distance volume", s.id)))?;
        sdfs.push(sdf);
        bvhs.push(TriangleBvh::new(&s.mesh));
        areas.push(s.mesh.area());
        ids.push(s.id.clone());
    }
    let center = order.iter().map(|&i| ensemble.samples[i].mesh.surface_centroid()).sum::<Vec3>() / order.len() as f64;
    let mut system = ParticleSystem {
        ids,
        order,
        sdfs,
        bvhs,
        areas,
        positions: Vec::new(),
        seed,
    };
    // ties (e.g. the centre of a cube) are broken once, on the first shape
    let anchor = system.bvhs[0].closest_point(&center).2;
    for n in 0..system.ids.len() {
        let start = system.bvhs[n].closest_point(&anchor).2;
        let p = system.project(n, &start);
        system.positions.push(vec![p]);
    }
    Ok(system)
}

/// Stable per-id stream number, so a shape's random draws do not depend on
/// its position in the ensemble.
/// Result of a particle optimisation.
#[derive(Clone, Debug)]
pub struct PbmResult {
    pub model: CorrespondenceModel,
    pub trace: Vec<PbmIteration>,
}

impl PbmResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("level,pass,particles,iteration,ensemble_entropy,sampling_entropy,objective\n");
        for t in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.level, t.pass, t.particles, t.iteration, t.ensemble_entropy, t.sampling_entropy, t.objective
            );
        }
        out
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.trace_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Splits from one particle up to `config.particles`, optimising Q after
/// every split. Rows of the returned model follow the ensemble order.
pub fn optimize(ensemble: &Ensemble, config: &PbmConfig, seed: u64) -> Result<PbmResult> {
    config.validate()?;
    let mut system = initialize_particles(ensemble, seed)?;
    let levels = config.particles.trailing_zeros() as usize;
    let mut trace = Vec::new();
    for level in 0..=levels {
        if level > 0 {
            system.split(level, config.split_offset);
        }
        let iterations = if level == levels { config.final_iterations } else { config.iterations };
        system.descend(config, level, iterations, &mut trace)?;
        if level == levels && config.reanchor {
            system.reanchor(config, level);
            let first = trace.len();
            system.descend(config, level, config.final_iterations, &mut trace)?;
            trace[first..].iter_mut().for_each(|t| t.pass = 1);
        }
        log::info!("particles: level {level}, {} per shape, Q = {:?}", system.num_particles(), trace.last().map(|t| t.objective));
    }
    Ok(PbmResult { model: system.to_model()?, trace })
}

/// Runs the final-level descent from existing correspondences, e.g. a
/// previous run or another method's output. Rows of `initial` must follow
/// the ensemble order.
pub fn refine(ensemble: &Ensemble, initial: &CorrespondenceModel, config: &PbmConfig, seed: u64) -> Result<PbmResult> {
    config.validate()?;
    if initial.num_shapes() != ensemble.len() {
        return Err(Error::InvalidParameter(format!(
            "{} initial shapes for an ensemble of {}",
            initial.num_shapes(),
            ensemble.len()
        )));
    }
    let mut system = initialize_particles(ensemble, seed)?;
    for n in 0..system.ids.len() {
        let orig = system.order[n];
        let row: Vec<Vec3> = initial.shape(orig).to_vec();
        system.positions[n] = row.iter().map(|p| system.project(n, p)).collect();
    }
    let level = system.num_particles().trailing_zeros() as usize;
    let mut trace = Vec::new();
    system.descend(config, level, config.final_iterations, &mut trace)?;
    Ok(PbmResult { model: system.to_model()?, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::ShapeSample;
    use crate::geometry::TriangleMesh;

    fn sphere_sample(id: &str, r: f64, h: f64) -> ShapeSample {
        let half = r + 4.0 * h;
        let n = (2.0 * half / h).round() as usize + 1;
        let sdf = SignedDistanceVolume::from_fn([n; 3], h, Vec3::repeat(-half), |p| p.norm() - r).unwrap();
        ShapeSample { id: id.into(), mesh: TriangleMesh::icosphere(4, r, Vec3::zeros()), sdf: Some(sdf) }
    }

    fn ensemble(samples: Vec<ShapeSample>) -> Ensemble {
        Ensemble { samples, world_frame: true, provenance: serde_json::Value::Null }
    }

    fn quick(m: usize) -> PbmConfig {
        PbmConfig { particles: m, iterations: 20, final_iterations: 60, ..Default::default() }
    }

    #[test]
    fn single_particle_on_surface() {
        let e = ensemble(vec![sphere_sample("a", 1.0, 0.1), sphere_sample("b", 1.0, 0.1)]);
        let r = optimize(&e, &quick(1), 0).unwrap();
        assert_eq!(r.model.num_points(), 1);
        for row in r.model.points() {
            assert!((row[0].norm() - 1.0).abs() < 2e-3);
        }
        assert!(r.trace.iter().all(|t| t.objective.is_finite()));
    }

    #[test]
    fn four_particles_spread_out() {
        let e = ensemble(vec![sphere_sample("a", 1.0, 0.1), sphere_sample("b", 1.0, 0.1)]);
        let r = optimize(&e, &quick(4), 3).unwrap();
        let ideal = (4.0 * std::f64::consts::PI / 4.0).sqrt();
        for row in r.model.points() {
            for i in 0..4 {
                for j in i + 1..4 {
                    assert!((row[i] - row[j]).norm() >= 0.5 * ideal);
                }
            }
        }
    }

    #[test]
    fn trace_is_monotone_within_levels() {
        let e = ensemble(vec![sphere_sample("a", 1.0, 0.1), sphere_sample("b", 1.1, 0.1), sphere_sample("c", 0.9, 0.1)]);
        let r = optimize(&e, &quick(16), 1).unwrap();
        for w in r.trace.windows(2) {
            if (w[0].level, w[0].pass) == (w[1].level, w[1].pass) {
                assert!(w[1].objective <= w[0].objective);
            }
        }
        let h = e.samples[0].sdf.as_ref().unwrap().spacing();
        for (row, s) in r.model.points().iter().zip(&e.samples) {
            assert!(row.iter().all(|p| s.sdf.as_ref().unwrap().sample(p).unwrap().abs() <= 1e-3 * h));
        }
    }

    #[test]
    fn deterministic_and_order_independent() {
        let mk = || vec![sphere_sample("a", 1.0, 0.1), sphere_sample("b", 1.2, 0.1), sphere_sample("c", 0.8, 0.1)];
        let fwd = optimize(&ensemble(mk()), &quick(8), 5).unwrap();
        let again = optimize(&ensemble(mk()), &quick(8), 5).unwrap();
        assert_eq!(fwd.model, again.model);
        let mut rev = mk();
        rev.reverse();
        let back = optimize(&ensemble(rev), &quick(8), 5).unwrap();
        assert_eq!(back.model.ids(), ["c", "b", "a"]);
        for i in 0..3 {
            assert_eq!(back.model.shape(2 - i), fwd.model.shape(i));
        }
    }

    #[test]
    fn missing_volume_is_rejected() {
        let mut a = sphere_sample("a", 1.0, 0.2);
        a.sdf = None;
        let e = ensemble(vec![a, sphere_sample("b", 1.0, 0.2)]);
        assert!(matches!(optimize(&e, &quick(4), 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn non_power_of_two_rejected() {
        let e = ensemble(vec![sphere_sample("a", 1.0, 0.2), sphere_sample("b", 1.0, 0.2)]);
        assert!(optimize(&e, &quick(6), 0).is_err());
    }
}
