use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{kernel, pullback, shoot, DeformationParams};
use super::varifold::{data_term, Target};
use crate::ensembles::Ensemble;
use crate::geometry::{bounds, polygonize, sdf_on_grid, SignedDistanceVolume, TriangleMesh, Vec3};
use crate::shapestats::CorrespondenceModel;
use crate::{Error, Result};

const MAX_BACKTRACKS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformConfig {
    /// Control points per axis of the initial grid.
    pub grid: usize,
    /// Deformation kernel width as a fraction of the ensemble diagonal.
    pub kernel_fraction: f64,
    /// Varifold kernel width as a fraction of the ensemble diagonal.
    pub varifold_fraction: f64,
    /// Euler steps per flow.
    pub steps: usize,
    pub iterations: usize,
    /// Weight γ of the kernel norm of the momenta.
    pub regularity: f64,
    pub update_template: bool,
    pub update_controls: bool,
    /// Targets with more faces than this are merged into cells of
    /// `cluster_fraction · σ_W`.
    pub cluster_above: usize,
    pub cluster_fraction: f64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            kernel_fraction: 0.15,
            varifold_fraction: 0.08,
            steps: 10,
            iterations: 20,
            regularity: 0.01,
            update_template: true,
            update_controls: true,
            cluster_above: 1500,
            cluster_fraction: 0.5,
        }
    }
}

impl DeformConfig {
    fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.steps == 0 {
            return Err(Error::InvalidParameter("control grid and flow steps must be at least 1".into()));
        }
        let positive = [self.kernel_fraction, self.varifold_fraction, self.cluster_fraction];
        if !positive.iter().all(|v| *v > 0.0 && v.is_finite()) || !(self.regularity >= 0.0) {
            return Err(Error::InvalidParameter("kernel widths must be positive and γ non-negative".into()));
        }
        Ok(())
    }
}

/// Objective after one alternation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AtlasIteration {
    pub iteration: usize,
    /// Σₙ d²ₙ / mean ⟨Bₙ, Bₙ⟩.
    pub data: f64,
    /// γ Σₙ Σᵢⱼ K(qᵢ, qⱼ) μᵢ·μⱼ / σ².
    pub regularity: f64,
    pub objective: f64,
}

/// Template, shared control points and one momenta set per sample.
#[derive(Clone, Debug)]
pub struct Atlas {
    pub ids: Vec<String>,
    pub template: TriangleMesh,
    pub control_points: Vec<Vec3>,
    pub momenta: Vec<Vec<Vec3>>,
    pub sigma: f64,
    pub sigma_w: f64,
    pub steps: usize,
    pub trace: Vec<AtlasIteration>,
}

impl Atlas {
    pub fn params(&self, n: usize) -> DeformationParams {
        DeformationParams {
            control_points: self.control_points.clone(),
            momenta: self.momenta[n].clone(),
            sigma: self.sigma,
        }
    }

    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.objective)
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,data,regularity,objective\n");
        for t in &self.trace {
            let _ = writeln!(out, "{},{},{},{}", t.iteration, t.data, t.regularity, t.objective);
        }
        out
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.trace_csv()).map_err(|e| Error::io(path, e))
    }

    /// The template deformed onto sample `n`.
    pub fn deformed_template(&self, n: usize) -> Result<TriangleMesh> {
        let moved = super::flow(&self.params(n), self.template.vertices(), self.steps)?;
        self.template.with_vertices(moved)
    }
}

/// Diagonal of the bounding box of all samples.
pub fn ensemble_diagonal(ensemble: &Ensemble) -> f64 {
    let all: Vec<Vec3> = ensemble.samples.iter().flat_map(|s| s.mesh.vertices().iter().copied()).collect();
    bounds(&all).map_or(0.0, |(lo, hi)| (hi - lo).norm())
}

/// Icosphere at the mean solid centroid with the mean surface area.
pub fn sphere_template(ensemble: &Ensemble, level: u32) -> Result<TriangleMesh> {
    if ensemble.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let n = ensemble.len() as f64;
    let center = ensemble.samples.iter().map(|s| s.mesh.centroid()).sum::<Vec3>() / n;
    let area = ensemble.samples.iter().map(|s| s.mesh.area()).sum::<f64>() / n;
    Ok(TriangleMesh::icosphere(level, (area / (4.0 * std::f64::consts::PI)).sqrt(), center))
}

/// Zero level set of the voxelwise mean signed distance, on a grid of the
/// given spacing covering every sample.
pub fn mean_template(ensemble: &Ensemble, spacing: f64) -> Result<TriangleMesh> {
    if ensemble.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let all: Vec<Vec3> = ensemble.samples.iter().flat_map(|s| s.mesh.vertices().iter().copied()).collect();
    let (lo, hi) = bounds(&all).unwrap();
    let pad = Vec3::repeat(2.0 * spacing);
    let (dims, origin) = SignedDistanceVolume::grid_for_box(lo - pad, hi + pad, spacing);
    let mut acc = vec![0.0; dims[0] * dims[1] * dims[2]];
    for s in &ensemble.samples {
        let sdf = sdf_on_grid(&s.mesh, dims, spacing, origin)?;
        acc.iter_mut().zip(sdf.values()).for_each(|(a, v)| *a += v);
    }
    let n = ensemble.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    polygonize(&SignedDistanceVolume::new(dims, spacing, origin, acc)?)
}

/// Regular `g × g × g` grid spanning the mesh's bounding box.
fn control_grid(mesh: &TriangleMesh, g: usize) -> Vec<Vec3> {
    let (lo, hi) = mesh.bounding_box();
    let at = |i: usize, k: usize| {
        if g == 1 {
            0.5 * (lo[k] + hi[k])
        } else {
            lo[k] + (hi[k] - lo[k]) * i as f64 / (g - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(g * g * g);
    for k in 0..g {
        for j in 0..g {
            for i in 0..g {
                out.push(Vec3::new(at(i, 0), at(j, 1), at(k, 2)));
            }
        }
    }
    out
}

/// `Σᵢⱼ K(qᵢ, qⱼ) μᵢ·μⱼ` with gradients in q and μ.
fn kernel_norm(q: &[Vec3], mu: &[Vec3], sigma: f64) -> (f64, Vec<Vec3>, Vec<Vec3>) {
    let p = q.len();
    let s2 = sigma * sigma;
    let (mut val, mut gq, mut gmu) = (0.0, vec![Vec3::zeros(); p], vec![Vec3::zeros(); p]);
    for i in 0..p {
        for j in 0..p {
            let d = q[i] - q[j];
            let k = (-d.norm_squared() / s2).exp();
            let m = mu[i].dot(&mu[j]);
            val += k * m;
            gmu[i] += 2.0 * k * mu[j];
            gq[i] += (-4.0 * k * m / s2) * d;
        }
    }
    (val, gq, gmu)
}

/// Gradient of the data term with respect to each block of unknowns.
#[derive(Clone, Debug)]
pub struct DataGradient {
    pub template: Vec<Vec3>,
    pub control_points: Vec<Vec3>,
    pub momenta: Vec<Vec3>,
}

/// `d²(φ(template), target)` on the exact (unmerged) target, with its
/// gradient.
pub fn data_term_gradient(
    template: &TriangleMesh,
    target: &TriangleMesh,
    params: &DeformationParams,
    sigma_w: f64,
    steps: usize,
) -> Result<(f64, DataGradient)> {
    let traj = shoot(params, template.vertices(), steps)?;
    let (d2, g_end) = data_term(traj.end(), template.faces(), &Target::new(target, sigma_w, None), sigma_w);
    let (template, control_points, momenta) = pullback(params, &traj, &g_end);
    Ok((d2, DataGradient { template, control_points, momenta }))
}

struct Problem<'a> {
    faces: &'a [[usize; 3]],
    targets: Vec<Target>,
    sigma: f64,
    sigma_w: f64,
    steps: usize,
    /// 1 / mean ⟨Bₙ, Bₙ⟩.
    data_scale: f64,
    /// γ / σ².
    reg_scale: f64,
}

/// One sample's objective term and, on request, its gradients with
/// respect to template vertices, control points and momenta.
struct Term {
    data: f64,
    reg: f64,
    grads: Option<(Vec<Vec3>, Vec<Vec3>, Vec<Vec3>)>,
}

impl Term {
    fn value(&self) -> f64 {
        self.data + self.reg
    }
}

impl Problem<'_> {
    fn term(&self, n: usize, x0: &[Vec3], q: &[Vec3], mu: &[Vec3], with_grad: bool) -> Result<Term> {
        let params = DeformationParams { control_points: q.to_vec(), momenta: mu.to_vec(), sigma: self.sigma };
        let traj = shoot(&params, x0, self.steps)?;
        let (d2, g_end) = data_term(traj.end(), self.faces, &self.targets[n], self.sigma_w);
        let (r, rq, rmu) = kernel_norm(q, mu, self.sigma);
        let (data, reg) = (self.data_scale * d2, self.reg_scale * r);
        if !(data.is_finite() && reg.is_finite()) {
            return Err(Error::Divergence { trace: vec![data + reg] });
        }
        let grads = with_grad.then(|| {
            let scaled: Vec<Vec3> = g_end.iter().map(|g| self.data_scale * g).collect();
            let (gx, mut gq, mut gmu) = pullback(&params, &traj, &scaled);
            gq.iter_mut().zip(&rq).for_each(|(a, b)| *a += self.reg_scale * b);
            gmu.iter_mut().zip(&rmu).for_each(|(a, b)| *a += self.reg_scale * b);
            (gx, gq, gmu)
        });
        Ok(Term { data, reg, grads })
    }
}

fn max_norm(v: &[Vec3]) -> f64 {
    v.iter().map(|g| g.norm()).fold(0.0, f64::max)
}

fn stepped(x: &[Vec3], dir: &[Vec3], scale: f64) -> Vec<Vec3> {
    x.iter().zip(dir).map(|(a, d)| a - scale * d).collect()
}

/// Alternating descent on
/// `Σₙ d²(φₙ(template), sampleₙ) / mean⟨Bₙ,Bₙ⟩ + γ Σₙ Σᵢⱼ K(qᵢ,qⱼ)μₙᵢ·μₙⱼ / σ²`:
/// first every sample's momenta, then control points and template
/// vertices together. Each block only accepts non-increasing steps.
pub fn estimate_atlas(ensemble: &Ensemble, template_init: &TriangleMesh, config: &DeformConfig) -> Result<Atlas> {
    config.validate()?;
    if ensemble.len() < 2 {
        return Err(Error::InvalidParameter("atlas estimation needs at least two samples".into()));
    }
    template_init.check_watertight()?;
    let diag = ensemble_diagonal(ensemble);
    let sigma = config.kernel_fraction * diag;
    let sigma_w = config.varifold_fraction * diag;
    let cell = config.cluster_fraction * sigma_w;
    let targets: Vec<Target> = ensemble
        .samples
        .iter()
        .map(|s| Target::new(&s.mesh, sigma_w, (s.mesh.num_faces() > config.cluster_above).then_some(cell)))
        .collect();
    let data_scale = ensemble.len() as f64 / targets.iter().map(|t| t.self_inner).sum::<f64>();
    let problem = Problem {
        faces: template_init.faces(),
        targets,
        sigma,
        sigma_w,
        steps: config.steps,
        data_scale,
        reg_scale: config.regularity / (sigma * sigma),
    };
    let n = ensemble.len();
    let mut x0 = template_init.vertices().to_vec();
    let mut q = control_grid(template_init, config.grid);
    let p = q.len();
    let mut momenta = vec![vec![Vec3::zeros(); p]; n];

    type Grads = (Vec<Vec3>, Vec<Vec3>, Vec<Vec3>);
    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut grads: Vec<Grads> = Vec::with_capacity(n);
    for (k, mu) in momenta.iter().enumerate() {
        let t = problem.term(k, &x0, &q, mu, true)?;
        terms.push((t.data, t.reg));
        grads.push(t.grads.unwrap());
    }
    let sum = |terms: &[(f64, f64)]| terms.iter().fold((0.0, 0.0), |a, t| (a.0 + t.0, a.1 + t.1));
    let (d, r) = sum(&terms);
    let initial_data = d;
    let mut trace = vec![AtlasIteration { iteration: 0, data: d, regularity: r, objective: d + r }];
    let mut eta_mu = vec![0.1 * sigma; n];
    let mut eta_shape = 0.05;

    // grads[k] always holds sample k's gradients at the current state
    for iteration in 1..=config.iterations {
        let before = trace.last().unwrap().objective;
        // momenta, one sample at a time
        for k in 0..n {
            let g = grads[k].2.clone();
            let gmax = max_norm(&g);
            if !(gmax > 0.0) {
                continue;
            }
            let current = terms[k].0 + terms[k].1;
            for _ in 0..MAX_BACKTRACKS {
                let trial = stepped(&momenta[k], &g, eta_mu[k] / gmax);
                match problem.term(k, &x0, &q, &trial, true) {
                    Ok(tt) if tt.value() <= current => {
                        momenta[k] = trial;
                        terms[k] = (tt.data, tt.reg);
                        grads[k] = tt.grads.unwrap();
                        eta_mu[k] = (1.5 * eta_mu[k]).min(sigma);
                        break;
                    }
                    Ok(_) | Err(Error::UnstableFlow { .. }) => eta_mu[k] *= 0.5,
                    Err(e) => return Err(e),
                }
            }
        }
        // control points and template
        if config.update_controls || config.update_template {
            let mut gx = vec![Vec3::zeros(); x0.len()];
            let mut gq = vec![Vec3::zeros(); p];
            for (a, b, _) in &grads {
                gx.iter_mut().zip(a).for_each(|(s, v)| *s += v);
                gq.iter_mut().zip(b).for_each(|(s, v)| *s += v);
            }
            if !config.update_controls {
                gq.iter_mut().for_each(|g| *g = Vec3::zeros());
            }
            let gx = if config.update_template { smooth(&x0, &gx, sigma_w) } else { vec![Vec3::zeros(); x0.len()] };
            let (mx, mq) = (max_norm(&gx), max_norm(&gq));
            if mx > 0.0 || mq > 0.0 {
                let current: f64 = terms.iter().map(|t| t.0 + t.1).sum();
                for _ in 0..MAX_BACKTRACKS {
                    let tx = if mx > 0.0 { stepped(&x0, &gx, eta_shape * sigma_w / mx) } else { x0.clone() };
                    let tq = if mq > 0.0 { stepped(&q, &gq, eta_shape * sigma / mq) } else { q.clone() };
                    let mut trial = Vec::with_capacity(n);
                    let mut failed = None;
                    for (k, mu) in momenta.iter().enumerate() {
                        match problem.term(k, &tx, &tq, mu, true) {
                            Ok(t) => trial.push(t),
                            Err(e) => {
                                failed = Some(e);
                                break;
                            }
                        }
                    }
                    match failed {
                        None if trial.iter().map(Term::value).sum::<f64>() <= current => {
                            x0 = tx;
                            q = tq;
                            terms = trial.iter().map(|t| (t.data, t.reg)).collect();
                            grads = trial.into_iter().map(|t| t.grads.unwrap()).collect();
                            eta_shape = (1.5 * eta_shape).min(1.0);
                            break;
                        }
                        None | Some(Error::UnstableFlow { .. }) => eta_shape *= 0.5,
                        Some(e) => return Err(e),
                    }
                }
            }
        }
        let (d, r) = sum(&terms);
        trace.push(AtlasIteration { iteration, data: d, regularity: r, objective: d + r });
        log::debug!("atlas iteration {iteration}: objective {}", d + r);
        if before - (d + r) <= 1e-10 * before.abs() {
            break;
        }
    }
    if trace.last().unwrap().data > initial_data {
        log::warn!("atlas data term ended above its initial value");
    }
    Ok(Atlas {
        ids: ensemble.ids(),
        template: template_init.with_vertices(x0)?,
        control_points: q,
        momenta,
        sigma,
        sigma_w,
        steps: config.steps,
        trace,
    })
}

/// Kernel smoothing `g̃ᵢ = Σⱼ K(xᵢ, xⱼ) gⱼ`; positive definite, so still a
/// descent direction.
fn smooth(x: &[Vec3], g: &[Vec3], sigma: f64) -> Vec<Vec3> {
    x.iter()
        .map(|xi| x.iter().zip(g).map(|(xj, gj)| kernel(xi, xj, sigma) * gj).sum())
        .collect()
}

/// Greedy farthest-point subset of `m` indices, starting from a seeded
/// random point; ties go to the lower index.
pub fn farthest_point_sampling(points: &[Vec3], m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > points.len() {
        return Err(Error::InvalidParameter(format!("cannot pick {m} of {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[first]).norm_squared()).collect();
    while chosen.len() < m {
        let (next, _) = dist
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[next]).norm_squared());
        }
    }
    Ok(chosen)
}

/// `m` template vertices pushed through every sample's deformation.
pub fn correspond_deform(atlas: &Atlas, m: usize, seed: u64) -> Result<CorrespondenceModel> {
    let picks = farthest_point_sampling(atlas.template.vertices(), m, seed)?;
    let start: Vec<Vec3> = picks.iter().map(|&i| atlas.template.vertices()[i]).collect();
    let rows = (0..atlas.momenta.len())
        .map(|n| super::flow(&atlas.params(n), &start, atlas.steps))
        .collect::<Result<Vec<_>>>()?;
    CorrespondenceModel::new("deform", atlas.ids.clone(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::ShapeSample;

    fn ensemble(meshes: Vec<TriangleMesh>) -> Ensemble {
        Ensemble {
            samples: meshes
                .into_iter()
                .enumerate()
                .map(|(i, mesh)| ShapeSample { id: format!("s{i}"), mesh, sdf: None })
                .collect(),
            world_frame: true,
            provenance: serde_json::Value::Null,
        }
    }

    #[test]
    fn kernel_norm_gradient_matches_finite_differences() {
        let q = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.7, 0.2, -0.1), Vec3::new(0.1, 0.9, 0.4)];
        let mu = vec![Vec3::new(0.3, -0.2, 0.1), Vec3::new(0.0, 0.5, 0.2), Vec3::new(-0.4, 0.1, 0.3)];
        let (_, gq, gmu) = kernel_norm(&q, &mu, 0.8);
        let eps = 1e-6;
        for i in 0..3 {
            for c in 0..3 {
                let (mut a, mut b) = (q.clone(), q.clone());
                a[i][c] += eps;
                b[i][c] -= eps;
                let fd = (kernel_norm(&a, &mu, 0.8).0 - kernel_norm(&b, &mu, 0.8).0) / (2.0 * eps);
                assert!((gq[i][c] - fd).abs() < 1e-7);
                let (mut a, mut b) = (mu.clone(), mu.clone());
                a[i][c] += eps;
                b[i][c] -= eps;
                let fd = (kernel_norm(&q, &a, 0.8).0 - kernel_norm(&q, &b, 0.8).0) / (2.0 * eps);
                assert!((gmu[i][c] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn control_grid_spans_bounding_box() {
        let mesh = TriangleMesh::cuboid(Vec3::new(-1.0, 0.0, 2.0), Vec3::new(1.0, 3.0, 4.0));
        let g = control_grid(&mesh, 4);
        assert_eq!(g.len(), 64);
        assert_eq!(g[0], Vec3::new(-1.0, 0.0, 2.0));
        assert_eq!(g[63], Vec3::new(1.0, 3.0, 4.0));
    }

    #[test]
    fn identical_shapes_keep_zero_momenta() {
        let mesh = TriangleMesh::ellipsoid(2, Vec3::new(1.5, 1.0, 0.8), Vec3::zeros());
        let e = ensemble(vec![mesh.clone(), mesh.clone(), mesh.clone()]);
        let cfg = DeformConfig { iterations: 3, ..Default::default() };
        let atlas = estimate_atlas(&e, &mesh, &cfg).unwrap();
        for mu in &atlas.momenta {
            assert!(max_norm(mu) < 1e-6);
        }
        let model = correspond_deform(&atlas, 32, 0).unwrap();
        assert!(model.max_point_variance() < 1e-6);
    }

    #[test]
    fn two_spheres_are_fitted() {
        let e = ensemble(vec![
            TriangleMesh::icosphere(2, 1.0, Vec3::zeros()),
            TriangleMesh::icosphere(2, 1.2, Vec3::zeros()),
        ]);
        let template = TriangleMesh::icosphere(2, 1.1, Vec3::zeros());
        let cfg = DeformConfig { iterations: 40, update_template: false, ..Default::default() };
        let atlas = estimate_atlas(&e, &template, &cfg).unwrap();
        for w in atlas.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
        for k in 0..2 {
            let start = varifold_d2(&template, &e.samples[k].mesh, atlas.sigma_w);
            let end = varifold_d2(&atlas.deformed_template(k).unwrap(), &e.samples[k].mesh, atlas.sigma_w);
            assert!(end < 0.1 * start, "sample {k}: {end} vs {start}");
        }
    }

    fn varifold_d2(a: &TriangleMesh, b: &TriangleMesh, s: f64) -> f64 {
        super::super::varifold_distance_squared(a, b, s)
    }

    #[test]
    fn zero_momenta_reproduce_template_samples() {
        let mesh = TriangleMesh::icosphere(2, 1.0, Vec3::zeros());
        let atlas = Atlas {
            ids: vec!["a".into(), "b".into()],
            template: mesh.clone(),
            control_points: control_grid(&mesh, 2),
            momenta: vec![vec![Vec3::zeros(); 8]; 2],
            sigma: 0.5,
            sigma_w: 0.3,
            steps: 5,
            trace: Vec::new(),
        };
        let model = correspond_deform(&atlas, 20, 3).unwrap();
        assert_eq!(model.shape(0), model.shape(1));
        let picks = farthest_point_sampling(mesh.vertices(), 20, 3).unwrap();
        for (p, &i) in model.shape(0).iter().zip(&picks) {
            assert_eq!(*p, mesh.vertices()[i]);
        }
    }

    #[test]
    fn farthest_points_are_spread() {
        let mesh = TriangleMesh::icosphere(3, 1.0, Vec3::zeros());
        let picks = farthest_point_sampling(mesh.vertices(), 12, 0).unwrap();
        let mut unique = picks.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 12);
        for i in 0..12 {
            for j in i + 1..12 {
                assert!((mesh.vertices()[picks[i]] - mesh.vertices()[picks[j]]).norm() > 0.8);
            }
        }
    }
}
