use rayon::prelude::*;

use super::gaussians::{logit, GaussianSet};
use crate::error::{Error, Result};
use crate::geom::{SphereIndex, SphereSampling};
use crate::image::{sample_equirect, EquirectImage};

/// Initial opacity of unprojected Gaussians.
pub const INIT_OPACITY: f64 = 0.9;
/// Gaussian standard deviation as a multiple of the local angular spacing
/// times depth.
pub const INIT_SCALE: f64 = 0.7;

/// One isotropic Gaussian per sphere sample, placed at the panorama depth
/// along its direction and colored from the panorama.
///
/// The depth map may have any equirect resolution; it is read bilinearly.
pub fn unproject_init(
    pano: &EquirectImage,
    depth: &EquirectImage,
    sampling: &SphereSampling,
) -> Result<GaussianSet> {
    unproject_with_scale(pano, depth, sampling, INIT_SCALE)
}

/// [`unproject_init`] with an explicit spacing multiplier for the scale.
pub fn unproject_with_scale(
    pano: &EquirectImage,
    depth: &EquirectImage,
    sampling: &SphereSampling,
    scale_factor: f64,
) -> Result<GaussianSet> {
    pano.ensure_panorama()?;
    depth.ensure_panorama()?;
    if pano.channels() != 3 || depth.channels() != 1 {
        return Err(Error::DimensionMismatch(
            "unprojection needs an RGB panorama and a single-channel depth map".into(),
        ));
    }
    if sampling.is_empty() {
        return Err(Error::InvalidInput("empty sphere sampling".into()));
    }
    let index = SphereIndex::new(sampling);
    let rows: Vec<[f64; 7]> = sampling
        .points()
        .par_iter()
        .map(|d| {
            let nn = index.knn::<4>(d);
            let spacing = nn[1..].iter().map(|&(_, a)| a).sum::<f64>() / 3.0;
            let z = sample_equirect(depth, d)[0] as f64;
            let c = sample_equirect(pano, d);
            [
                d.x() * z,
                d.y() * z,
                d.z() * z,
                (scale_factor * spacing * z).ln(),
                c[0] as f64,
                c[1] as f64,
                c[2] as f64,
            ]
        })
        .collect();
    if rows.iter().any(|r| !r.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidInput("depth map must be positive and finite".into()));
    }
    let mut g = GaussianSet::new();
    let ol = logit(INIT_OPACITY);
    for r in rows {
        g.positions.extend_from_slice(&r[0..3]);
        g.rotations.extend_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        g.log_scales.extend_from_slice(&[r[3]; 3]);
        g.colors.extend_from_slice(&r[4..7]);
        g.opacity_logits.push(ol);
    }
    Ok(g)
}
