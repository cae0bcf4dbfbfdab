use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{camera_ray, dir_to_pixel, Camera, SphereIndex, SphereSampling};
use crate::image::{sample_bilinear_clamped, Image};

/// Number of sphere points blended into each perspective latent cell.
pub const LATENT_NEIGHBORS: usize = 4;

/// Latent vectors of length `L·c` attached to the points of a [`SphereSampling`].
///
/// Values are stored point-major; the vector of point `i` holds frame `k`,
/// channel `j` at offset `k·c + j`.
#[derive(Debug, Clone)]
pub struct SphericalLatentField {
    sampling: Arc<SphereSampling>,
    frames: usize,
    channels: usize,
    step: usize,
    values: Vec<f32>,
}

impl SphericalLatentField {
    pub fn new(
        sampling: Arc<SphereSampling>,
        frames: usize,
        channels: usize,
        step: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if frames == 0 || channels == 0 {
            return Err(Error::InvalidInput("latent field needs L, c ≥ 1".into()));
        }
        if values.len() != sampling.len() * frames * channels {
            return Err(Error::DimensionMismatch(format!(
                "latent field with {} points × {} needs {} values, got {}",
                sampling.len(),
                frames * channels,
                sampling.len() * frames * channels,
                values.len()
            )));
        }
        Ok(SphericalLatentField {
            sampling,
            frames,
            channels,
            step,
            values,
        })
    }

    pub fn sampling(&self) -> &Arc<SphereSampling> {
        &self.sampling
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Per-point vector length `L·c`.
    pub fn dim(&self) -> usize {
        self.frames * self.channels
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn point(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub(crate) fn with_values(&self, values: Vec<f32>, step: usize) -> Self {
        SphericalLatentField {
            sampling: self.sampling.clone(),
            frames: self.frames,
            channels: self.channels,
            step,
            values,
        }
    }
}

/// Fills a field with i.i.d. standard normal values from a seeded generator.
pub fn init_latent(
    sampling: Arc<SphereSampling>,
    frames: usize,
    channels: usize,
    total_steps: usize,
    seed: u64,
) -> Result<SphericalLatentField> {
    let n = sampling.len() * frames * channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    SphericalLatentField::new(sampling, frames, channels, total_steps, values)
}

/// Precomputed 4-nearest-neighbor weights for projecting a field into one camera.
#[derive(Debug, Clone)]
pub struct ProjectionPlan {
    camera: Camera,
    taps: Vec<[(u32, f32); LATENT_NEIGHBORS]>,
}

impl ProjectionPlan {
    /// Builds the plan; fails if a cell has no sphere point within twice the
    /// mean sampling spacing.
    pub fn new(index: &SphereIndex, camera: &Camera) -> Result<Self> {
        let (w, h) = (camera.res_w(), camera.res_h());
        let limit = 2.0 * index.mean_spacing();
        let taps: Vec<Result<[(u32, f32); LATENT_NEIGHBORS]>> = (0..w * h)
            .into_par_iter()
            .map(|cell| {
                let (x, y) = camera.pixel_center(cell % w, cell / w);
                let d = camera_ray(camera, x, y);
                let nn = index.knn::<LATENT_NEIGHBORS>(&d);
                if nn[0].1 > limit {
                    return Err(Error::Coverage(format!(
                        "latent cell {cell} is {:.4} rad from the nearest sphere point (limit {limit:.4})",
                        nn[0].1
                    )));
                }
                Ok(inverse_distance_weights(&nn))
            })
            .collect();
        Ok(ProjectionPlan {
            camera: camera.clone(),
            taps: taps.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    /// Projects `field` into this camera's latent grid.
    pub fn project(&self, field: &SphericalLatentField) -> Image {
        let d = field.dim();
        let (w, h) = (self.camera.res_w(), self.camera.res_h());
        let mut out = Image::new(w, h, d);
        out.data_mut()
            .par_chunks_mut(d)
            .zip(self.taps.par_iter())
            .for_each(|(cell, taps)| {
                for &(idx, wt) in taps {
                    for (o, v) in cell.iter_mut().zip(field.point(idx as usize)) {
                        *o += wt * v;
                    }
                }
            });
        out
    }
}

fn inverse_distance_weights(
    nn: &[(usize, f64); LATENT_NEIGHBORS],
) -> [(u32, f32); LATENT_NEIGHBORS] {
    let inv = nn.map(|(_, a)| 1.0 / a.max(1e-12));
    let total: f64 = inv.iter().sum();
    let mut out = [(0u32, 0f32); LATENT_NEIGHBORS];
    for k in 0..LATENT_NEIGHBORS {
        out[k] = (nn[k].0 as u32, (inv[k] / total) as f32);
    }
    out
}

/// `γ(S, d)`: projects a spherical latent field into a camera's latent grid.
pub fn project_latent(
    field: &SphericalLatentField,
    index: &SphereIndex,
    camera: &Camera,
) -> Result<Image> {
    Ok(ProjectionPlan::new(index, camera)?.project(field))
}

/// For every camera, the sphere points inside its frustum and their pixel positions.
#[derive(Debug, Clone)]
pub struct FusionPlan {
    cameras: Vec<Camera>,
    entries: Vec<Vec<(u32, f32, f32)>>,
    counts: Vec<u32>,
}

impl FusionPlan {
    /// Fails if any sphere point lies outside every frustum.
    pub fn new(sampling: &SphereSampling, cameras: &[Camera]) -> Result<Self> {
        let entries: Vec<Vec<(u32, f32, f32)>> = cameras
            .par_iter()
            .map(|cam| {
                sampling
                    .points()
                    .iter()
                    .enumerate()
                    .filter_map(|(i, p)| {
                        let (x, y) = dir_to_pixel(cam, p)?;
                        let (px, py) = cam.plane_to_pixel(x, y);
                        Some((i as u32, px as f32, py as f32))
                    })
                    .collect()
            })
            .collect();
        let mut counts = vec![0u32; sampling.len()];
        for view in &entries {
            for &(i, _, _) in view {
                counts[i as usize] += 1;
            }
        }
        let uncovered = counts.iter().filter(|&&c| c == 0).count();
        if uncovered > 0 {
            return Err(Error::Coverage(format!(
                "{uncovered} sphere points are not covered by any camera"
            )));
        }
        Ok(FusionPlan {
            cameras: cameras.to_vec(),
            entries,
            counts,
        })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    /// Number of cameras covering each sphere point.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Per-point mean of bilinear reads from every covering view.
    ///
    /// Views are accumulated in camera order, so the result is independent of
    /// thread scheduling.
    pub fn fuse(&self, views: &[Image], dim: usize) -> Result<Vec<f32>> {
        if views.len() != self.cameras.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} views for {} cameras",
                views.len(),
                self.cameras.len()
            )));
        }
        for (v, cam) in views.iter().zip(&self.cameras) {
            if v.channels() != dim || v.width() != cam.res_w() || v.height() != cam.res_h() {
                return Err(Error::DimensionMismatch(
                    "denoised view does not match its latent camera".into(),
                ));
            }
        }
        let mut acc = vec![0.0f32; self.counts.len() * dim];
        let mut sample = vec![0.0f32; dim];
        for (view, entries) in views.iter().zip(&self.entries) {
            for &(i, px, py) in entries {
                sample_bilinear_clamped(view, px as f64, py as f64, &mut sample);
                let dst = &mut acc[i as usize * dim..(i as usize + 1) * dim];
                for (a, s) in dst.iter_mut().zip(&sample) {
                    *a += s;
                }
            }
        }
        acc.par_chunks_mut(dim)
            .zip(self.counts.par_iter())
            .for_each(|(v, &c)| {
                let c = c as f32;
                for x in v.iter_mut() {
                    *x /= c;
                }
            });
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{camera_fan, icosphere_samples, Direction};

    fn small_field(per_face: usize, value: impl Fn(&Direction) -> f32) -> SphericalLatentField {
        let s = Arc::new(icosphere_samples(per_face).unwrap());
        let values = s.points().iter().map(&value).collect();
        SphericalLatentField::new(s, 1, 1, 0, values).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let s = Arc::new(icosphere_samples(4).unwrap());
        let a = init_latent(s.clone(), 14, 9, 25, 7).unwrap();
        let b = init_latent(s.clone(), 14, 9, 25, 7).unwrap();
        assert_eq!(a.dim(), 126);
        assert_eq!(a.step(), 25);
        assert_eq!(a.values(), b.values());
        let c = init_latent(s, 14, 9, 25, 8).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn constant_field_projects_constant() {
        let field = small_field(100, |_| 0.4);
        let index = SphereIndex::new(field.sampling());
        let cam = &camera_fan(80.0, 12).unwrap()[3];
        let grid = project_latent(&field, &index, cam).unwrap();
        assert!(grid.data().iter().all(|v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn sampling_gap_fails_coverage_check() {
        // Points clustered in a small cap around +x leave a camera facing +y uncovered.
        let cap: Vec<Direction> = (0..200)
            .map(|i| {
                let a = i as f64 * 2.399963;
                let r = 0.05 * (i as f64 / 200.0).sqrt();
                Direction::new(1.0, r * a.cos(), r * a.sin()).unwrap()
            })
            .collect();
        let sparse = SphereIndex::from_points(&cap);
        let cam = Camera::from_fov(Direction::unit_y(), 80.0, 8).unwrap();
        assert!(matches!(ProjectionPlan::new(&sparse, &cam), Err(Error::Coverage(_))));
        let field = small_field(100, |_| 0.0);
        let index = SphereIndex::new(field.sampling());
        assert!(ProjectionPlan::new(&index, &cam).is_ok());
    }

    #[test]
    fn fusion_requires_full_coverage() {
        let s = icosphere_samples(9).unwrap();
        let one = vec![Camera::from_fov(Direction::unit_y(), 80.0, 8).unwrap()];
        assert!(FusionPlan::new(&s, &one).is_err());
        let fan = camera_fan(80.0, 8).unwrap();
        let plan = FusionPlan::new(&s, &fan).unwrap();
        assert!(plan.counts().iter().all(|&c| c >= 1));
    }
}
