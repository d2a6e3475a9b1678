use super::{polygonize, SignedDistanceVolume, Vec3};
use crate::{Error, Result};

/// Half-width of the smoothed band, in voxels.
const BAND_VOXELS: f64 = 3.0;

/// Narrow-band Gaussian smoothing. Each iteration blurs the band with a
/// separable binomial kernel; an iteration that changes the Euler
/// characteristic of the extracted zero level set is undone and smoothing
/// stops there.
pub fn smooth_sdf(sdf: &SignedDistanceVolume, iterations: usize) -> SignedDistanceVolume {
    let mut current = sdf.clone();
    if iterations == 0 {
        return current;
    }
    let chi = |v: &SignedDistanceVolume| polygonize(v).ok().map(|m| m.euler_characteristic());
    let reference = chi(sdf);
    let band = BAND_VOXELS * sdf.spacing();
    for it in 0..iterations {
        let blurred = blur(&current);
        let mut next = current.clone();
        for (dst, (&old, &new)) in next.values_mut().iter_mut().zip(current.values().iter().zip(&blurred)) {
            if old.abs() <= band {
                *dst = new;
            }
        }
        if chi(&next) != reference {
            log::warn!("smoothing iteration {it} changed topology; rolled back");
            break;
        }
        current = next;
    }
    current
}

fn blur(sdf: &SignedDistanceVolume) -> Vec<f64> {
    const W: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let dims = sdf.dims();
    let mut data = sdf.values().to_vec();
    let stride = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let src = data.clone();
        let n = dims[axis] as isize;
        for (idx, out) in data.iter_mut().enumerate() {
            let coord = ((idx / stride[axis]) % dims[axis]) as isize;
            let base = idx as isize - coord * stride[axis] as isize;
            let mut acc = 0.0;
            for (o, w) in W.iter().enumerate() {
                let c = (coord + o as isize - 2).clamp(0, n - 1);
                acc += w * src[(base + c * stride[axis] as isize) as usize];
            }
            *out = acc;
        }
    }
    data
}

/// Resamples every volume onto one grid: the union of all interior regions
/// plus `padding`, at the first volume's spacing.
pub fn crop_to_common_box(volumes: &[SignedDistanceVolume], ids: &[String], padding: f64) -> Result<Vec<SignedDistanceVolume>> {
    if volumes.is_empty() {
        return Err(Error::InvalidParameter("no volumes to crop".into()));
    }
    if ids.len() != volumes.len() {
        return Err(Error::InvalidParameter(format!("{} ids for {} volumes", ids.len(), volumes.len())));
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for (vol, id) in volumes.iter().zip(ids) {
        let [nx, ny, nz] = vol.dims();
        let mut any = false;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if vol.at(i, j, k) <= 0.0 {
                        let p = vol.position(i, j, k);
                        lo = lo.inf(&p);
                        hi = hi.sup(&p);
                        any = true;
                    }
                }
            }
        }
        if !any {
            return Err(Error::EmptyLevelSet(id.clone()));
        }
    }
    let h = volumes[0].spacing();
    let pad = Vec3::repeat(padding + h);
    let (dims, origin) = SignedDistanceVolume::grid_for_box(lo - pad, hi + pad, h);
    volumes
        .iter()
        .map(|vol| SignedDistanceVolume::from_fn(dims, h, origin, |p| vol.sample_clamped(p)))
        .collect()
}
