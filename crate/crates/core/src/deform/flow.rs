use crate::geometry::Vec3;
use crate::{Error, Result};

/// Control points, momenta and kernel width of one deformation.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationParams {
    pub control_points: Vec<Vec3>,
    pub momenta: Vec<Vec3>,
    pub sigma: f64,
}

impl DeformationParams {
    pub fn new(control_points: Vec<Vec3>, momenta: Vec<Vec3>, sigma: f64) -> Result<Self> {
        if control_points.is_empty() {
            return Err(Error::InvalidParameter("deformation needs at least one control point".into()));
        }
        if momenta.len() != control_points.len() {
            return Err(Error::InvalidParameter(format!(
                "{} momenta for {} control points",
                momenta.len(),
                control_points.len()
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel width must be positive, got {sigma}")));
        }
        Ok(Self { control_points, momenta, sigma })
    }

    /// Zero momenta: the identity deformation.
    pub fn identity(control_points: Vec<Vec3>, sigma: f64) -> Result<Self> {
        let p = control_points.len();
        Self::new(control_points, vec![Vec3::zeros(); p], sigma)
    }
}

/// Gaussian kernel `exp(-|x - y|² / σ²)`.
pub fn kernel(x: &Vec3, y: &Vec3, sigma: f64) -> f64 {
    (-(x - y).norm_squared() / (sigma * sigma)).exp()
}

fn velocity(x: &Vec3, q: &[Vec3], mu: &[Vec3], sigma: f64) -> Vec3 {
    q.iter().zip(mu).map(|(qi, mi)| kernel(x, qi, sigma) * mi).sum()
}

/// Velocity `X(x) = Σᵢ K(x, qᵢ) μᵢ`.
pub fn deformation_field(params: &DeformationParams, x: &Vec3) -> Vec3 {
    velocity(x, &params.control_points, &params.momenta, params.sigma)
}

/// Point and control-point positions after every Euler step; entry 0 is
/// the input.
#[derive(Clone, Debug)]
pub(crate) struct Trajectory {
    pub points: Vec<Vec<Vec3>>,
    pub controls: Vec<Vec<Vec3>>,
}

impl Trajectory {
    pub fn end(&self) -> &[Vec3] {
        self.points.last().unwrap()
    }
}

pub(crate) fn shoot(params: &DeformationParams, points: &[Vec3], steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidParameter("flow needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    let sigma = params.sigma;
    let mu = &params.momenta;
    let mut traj = Trajectory {
        points: vec![points.to_vec()],
        controls: vec![params.control_points.clone()],
    };
    for _ in 0..steps {
        let (x, q) = (traj.points.last().unwrap(), traj.controls.last().unwrap());
        let mut worst: f64 = 0.0;
        let mut advance = |pts: &[Vec3]| -> Vec<Vec3> {
            pts.iter()
                .map(|p| {
                    let d = h * velocity(p, q, mu, sigma);
                    worst = worst.max(d.norm());
                    p + d
                })
                .collect()
        };
        let nx = advance(x);
        let nq = advance(q);
        if !(worst <= sigma) {
            return Err(Error::UnstableFlow { displacement: worst, sigma });
        }
        traj.points.push(nx);
        traj.controls.push(nq);
    }
    Ok(traj)
}

/// Integrates `points` through the velocity field with `steps` explicit
/// Euler steps of size 1/steps. Control points move with the flow; the
/// momenta stay fixed.
pub fn flow(params: &DeformationParams, points: &[Vec3], steps: usize) -> Result<Vec<Vec3>> {
    Ok(shoot(params, points, steps)?.points.pop().unwrap())
}

/// Gradients of a scalar of the final points with respect to the initial
/// points, the initial control points and the momenta, given its gradient
/// `grad_end` with respect to the final points.
pub(crate) fn pullback(
    params: &DeformationParams,
    traj: &Trajectory,
    grad_end: &[Vec3],
) -> (Vec<Vec3>, Vec<Vec3>, Vec<Vec3>) {
    let steps = traj.points.len() - 1;
    let h = 1.0 / steps as f64;
    let s2 = params.sigma * params.sigma;
    let mu = &params.momenta;
    let p = mu.len();
    let mut gx = grad_end.to_vec();
    let mut gq = vec![Vec3::zeros(); p];
    let mut gmu = vec![Vec3::zeros(); p];
    for k in (0..steps).rev() {
        let (x, q) = (&traj.points[k], &traj.controls[k]);
        let mut nx = gx.clone();
        let mut nq = gq.clone();
        let carry = |y: &Vec3, g: &Vec3, gy: &mut Vec3, nq: &mut [Vec3], gmu: &mut [Vec3]| {
            if g.norm_squared() == 0.0 {
                return;
            }
            for i in 0..p {
                let d = y - q[i];
                let kv = (-d.norm_squared() / s2).exp();
                let s = g.dot(&mu[i]);
                let pull = (2.0 * h * s * kv / s2) * d;
                *gy -= pull;
                nq[i] += pull;
                gmu[i] += h * kv * g;
            }
        };
        for j in 0..x.len() {
            let g = gx[j];
            carry(&x[j], &g, &mut nx[j], &mut nq, &mut gmu);
        }
        for l in 0..p {
            let g = gq[l];
            let mut gl = Vec3::zeros();
            carry(&q[l], &g, &mut gl, &mut nq, &mut gmu);
            nq[l] += gl;
        }
        gx = nx;
        gq = nq;
    }
    (gx, gq, gmu)
}
