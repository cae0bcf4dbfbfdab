use std::sync::Mutex;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{camera_ray, Camera};
use crate::image::{rgb_png_bytes, Image};
use crate::pipeline::handshake::{HandshakeClient, HandshakeConfig};
use crate::pipeline::synth::SyntheticScene;

/// Inputs to one monocular depth estimate.
pub struct DepthRequest<'a> {
    pub image: &'a Image,
    pub view: usize,
    pub frame: usize,
    pub camera: &'a Camera,
}

/// A monocular depth estimator `Θ`.
///
/// Returns a positive planar depth grid at the image's resolution, in an
/// arbitrary affine convention.
pub trait MonoDepth: Send + Sync {
    fn estimate(&self, req: &DepthRequest) -> Result<Image>;

    fn concurrent(&self) -> bool {
        true
    }
}

/// Converts planar depth to distance along each pixel's ray.
pub fn rescale_depth(depth: &Image, cam: &Camera) -> Result<Image> {
    if depth.channels() != 1 || depth.width() != cam.res_w() || depth.height() != cam.res_h() {
        return Err(Error::DimensionMismatch(format!(
            "depth grid {:?} does not match camera {}×{}",
            depth.dims(),
            cam.res_w(),
            cam.res_h()
        )));
    }
    let axis = cam.axis();
    Ok(Image::from_fn(depth.width(), depth.height(), 1, |c, r, px| {
        let (x, y) = cam.pixel_center(c, r);
        let cos = camera_ray(cam, x, y).dot(&axis);
        px[0] = (depth.get(c, r, 0) as f64 / cos) as f32;
    }))
}

/// Per-view affine corruption applied by [`SyntheticDepth`].
#[derive(Debug, Clone)]
pub struct Corruption {
    pub scale: f64,
    /// Shift amplitude in depth units.
    pub amplitude: f64,
    /// Constant part of the shift, in units of the amplitude.
    pub offset: f64,
    /// Weight of the spatially varying part; `|offset|` is at most `1 − variation`.
    pub variation: f64,
    coeffs: [f64; 6],
}

impl Corruption {
    pub fn identity() -> Self {
        Corruption {
            scale: 1.0,
            amplitude: 0.0,
            offset: 0.0,
            variation: 0.0,
            coeffs: [0.0; 6],
        }
    }

    /// Smooth shift at normalized plane coordinates, bounded by `amplitude`.
    pub fn shift(&self, x: f64, y: f64) -> f64 {
        let [a, b, c, f, p, q] = self.coeffs;
        let raw = a * x + b * y + c * (std::f64::consts::PI * (f * x + p)).cos()
            * (std::f64::consts::PI * (f * y + q)).cos();
        // |a| + |b| + |c| ≤ 1 keeps |raw| ≤ 1 on [-1, 1]².
        self.amplitude * (self.offset + self.variation * raw)
    }
}

#[derive(Debug, Clone)]
pub struct CorruptionConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    /// Maximum shift amplitude as a fraction of the median scene depth.
    pub shift_fraction: f64,
    /// Fraction of the amplitude spent on spatial variation across a view;
    /// the rest is a per-view constant offset.
    pub variation: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            scale_min: 0.7,
            scale_max: 1.4,
            shift_fraction: 0.1,
            variation: 1.0,
            seed: 0,
        }
    }
}

/// Exact planar depth of a [`SyntheticScene`] seen from the origin, with a
/// per-view affine corruption `s_i·z + b_i(x, y)`. Ignores image content.
pub struct SyntheticDepth {
    scene: SyntheticScene,
    corruptions: Vec<Corruption>,
}

impl SyntheticDepth {
    pub fn exact(scene: SyntheticScene, views: usize) -> Self {
        SyntheticDepth {
            scene,
            corruptions: vec![Corruption::identity(); views],
        }
    }

    pub fn corrupted(scene: SyntheticScene, views: usize, config: &CorruptionConfig) -> Self {
        let median = {
            let d = scene.depth_panorama(0, 64, 32);
            let mut v: Vec<f32> = d.data().to_vec();
            v.sort_by(f32::total_cmp);
            v[v.len() / 2] as f64
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let corruptions = (0..views)
            .map(|_| {
                let scale = rng.gen_range(config.scale_min..=config.scale_max);
                let amplitude = median * config.shift_fraction * rng.gen_range(0.5..=1.0);
                let mut w = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let norm: f64 = w.iter().map(|v: &f64| v.abs()).sum::<f64>().max(1e-9);
                for v in &mut w {
                    *v /= norm;
                }
                let offset = (1.0 - config.variation) * rng.gen_range(-1.0..=1.0);
                Corruption {
                    scale,
                    amplitude,
                    offset,
                    variation: config.variation,
                    coeffs: [
                        w[0],
                        w[1],
                        w[2],
                        rng.gen_range(0.3..0.8),
                        rng.gen_range(0.0..2.0),
                        rng.gen_range(0.0..2.0),
                    ],
                }
            })
            .collect();
        SyntheticDepth { scene, corruptions }
    }

    pub fn corruptions(&self) -> &[Corruption] {
        &self.corruptions
    }
}

impl MonoDepth for SyntheticDepth {
    fn estimate(&self, req: &DepthRequest) -> Result<Image> {
        let corr = self.corruptions.get(req.view).ok_or_else(|| {
            Error::DepthEstimator(format!("no corruption configured for view {}", req.view))
        })?;
        let cam = req.camera;
        let (w, h) = (req.image.width(), req.image.height());
        if w != cam.res_w() || h != cam.res_h() {
            return Err(Error::DimensionMismatch(
                "depth request image does not match its camera".into(),
            ));
        }
        let axis = cam.axis();
        let origin = Vector3::zeros();
        let out = Image::from_fn(w, h, 1, |c, r, px| {
            let (x, y) = cam.pixel_center(c, r);
            let d = camera_ray(cam, x, y);
            let dist = self.scene.cast(&origin, d.as_vector(), req.frame).distance;
            let z = dist * d.dot(&axis);
            px[0] = (corr.scale * z + corr.shift(x, y)) as f32;
        });
        if out.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::DepthEstimator(format!(
                "view {} frame {}: corruption produced non-positive depth",
                req.view, req.frame
            )));
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct DepthMetadata<'a> {
    view: usize,
    frame: usize,
    width: usize,
    height: usize,
    image_path: &'a str,
}

/// Delegates depth estimation to an external process over the file handshake.
///
/// Requests are keyed `d{frame}_{view}` with the view written to `req_{key}.png`;
/// the response is an `h × w` tensor.
pub struct ExternalDepth {
    client: Mutex<HandshakeClient>,
}

impl ExternalDepth {
    pub fn new(config: HandshakeConfig) -> Result<Self> {
        Ok(ExternalDepth {
            client: Mutex::new(HandshakeClient::new(config)?),
        })
    }

    pub fn finish(&self) -> Result<()> {
        self.client.lock().expect("client lock").finish()
    }
}

impl MonoDepth for ExternalDepth {
    fn estimate(&self, req: &DepthRequest) -> Result<Image> {
        let client = self.client.lock().expect("client lock");
        let key = format!("d{}_{}", req.frame, req.view);
        let path = client.request_path(&key, "png");
        let meta = DepthMetadata {
            view: req.view,
            frame: req.frame,
            width: req.image.width(),
            height: req.image.height(),
            image_path: &path.to_string_lossy(),
        };
        let out = client
            .exchange(&key, &[("png", rgb_png_bytes(req.image)?)], &meta)?
            .into_image()
            .map_err(|e| Error::DepthEstimator(format!("response {key}: {e}")))?;
        if out.dims() != (req.image.width(), req.image.height(), 1) {
            return Err(Error::DepthEstimator(format!(
                "response {key} has shape {:?}",
                out.dims()
            )));
        }
        if out.data().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::DepthEstimator(format!(
                "response {key} contains non-positive or non-finite depth"
            )));
        }
        Ok(out)
    }

    fn concurrent(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Direction;
    use crate::pipeline::synth::SceneConfig;

    #[test]
    fn rescale_center_and_corner() {
        let cam = Camera::from_fov(Direction::unit_y(), 80.0, 9).unwrap();
        let ones = Image::filled(9, 9, 1, 1.0);
        let out = rescale_depth(&ones, &cam).unwrap();
        assert!((out.get(4, 4, 0) - 1.0).abs() < 1e-7);
        let (x, y) = cam.pixel_center(0, 0);
        let theta = camera_ray(&cam, x, y).angle_to(&cam.axis());
        assert!((out.get(0, 0, 0) as f64 - 1.0 / theta.cos()).abs() < 1e-6);
    }

    #[test]
    fn constant_distance_sphere_rescales_to_constant() {
        let cam = Camera::from_fov(Direction::new(0.3, 1.0, 0.2).unwrap(), 80.0, 15).unwrap();
        let radius = 2.5;
        let z = Image::from_fn(15, 15, 1, |c, r, px| {
            let (x, y) = cam.pixel_center(c, r);
            px[0] = (radius * camera_ray(&cam, x, y).dot(&cam.axis())) as f32;
        });
        let out = rescale_depth(&z, &cam).unwrap();
        assert!(out.data().iter().all(|v| (*v as f64 - radius).abs() < 1e-6));
    }

    #[test]
    fn synthetic_depth_is_affine_in_truth() {
        let scene = SyntheticScene::new(SceneConfig {
            width: 64,
            height: 32,
            supersample: 1,
            ..SceneConfig::default()
        })
        .unwrap();
        let cam = Camera::from_fov(Direction::unit_y(), 80.0, 12).unwrap();
        let img = Image::new(12, 12, 3);
        let exact = SyntheticDepth::exact(scene.clone(), 1);
        let bad = SyntheticDepth::corrupted(scene, 1, &CorruptionConfig::default());
        let req = DepthRequest {
            image: &img,
            view: 0,
            frame: 0,
            camera: &cam,
        };
        let z = exact.estimate(&req).unwrap();
        let zc = bad.estimate(&req).unwrap();
        let corr = &bad.corruptions()[0];
        assert!((0.7..=1.4).contains(&corr.scale));
        for r in 0..12 {
            for c in 0..12 {
                let (x, y) = cam.pixel_center(c, r);
                let expect = corr.scale * z.get(c, r, 0) as f64 + corr.shift(x, y);
                assert!((zc.get(c, r, 0) as f64 - expect).abs() < 1e-5);
                assert!(corr.shift(x, y).abs() <= corr.amplitude + 1e-12);
            }
        }
        let missing = DepthRequest { view: 3, ..req };
        assert!(bad.estimate(&missing).is_err());
    }
}
