use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::codec::Codec;
use crate::error::{Error, Result};
use crate::geom::{Camera, Direction};
use crate::image::{
    mask_png_bytes, project_perspective, rgb_png_bytes, sample_bilinear_clamped,
    sample_equirect_into, texel_direction, EquirectImage, Image, PanoVideo,
};
use crate::pipeline::handshake::{HandshakeClient, HandshakeConfig};
use crate::pipeline::tensor::Tensor;

/// Inputs to one perspective denoising step.
pub struct DenoiseRequest<'a> {
    /// Perspective latent grid `p_h × p_w × (L·c)`.
    pub latent: &'a Image,
    /// Conditioning view of the static panorama, `p_H × p_W × 3`.
    pub condition: &'a Image,
    /// Binary animation mask at conditioning resolution.
    pub mask: &'a Image,
    /// Current step `t`, counting down from `total_steps` to 1.
    pub step: usize,
    pub total_steps: usize,
    pub view: usize,
    /// Camera of the conditioning view.
    pub camera: &'a Camera,
    pub frames: usize,
    pub channels: usize,
    pub codec: &'a dyn Codec,
    pub seed: u64,
}

/// A per-view video denoiser `Φ`.
///
/// Implementations map `z^t` to `z^{t-1}` with the shape of `req.latent`.
pub trait Denoiser: Send + Sync {
    fn step(&self, req: &DenoiseRequest) -> Result<Image>;

    /// Step count the denoiser was built for, if it has a fixed schedule.
    fn expected_steps(&self) -> Option<usize> {
        None
    }

    /// Whether `step` may be called concurrently for different views.
    fn concurrent(&self) -> bool {
        true
    }
}

/// `z' = ((t−1)·z + target) / t`; at `t = 1` the result is `target`.
pub fn blend_toward(z: &Image, target: &Image, t: usize) -> Result<Image> {
    z.same_dims(target)?;
    if t == 0 {
        return Err(Error::InvalidInput("denoise step index must be ≥ 1".into()));
    }
    if t == 1 {
        return Ok(target.clone());
    }
    let keep = (t - 1) as f32;
    let inv = 1.0 / t as f32;
    let data = z
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (keep * a + b) * inv)
        .collect();
    Image::from_data(z.width(), z.height(), z.channels(), data)
}

/// Concatenates per-frame latent grids along the channel axis.
pub fn stack_frames(frames: &[Image]) -> Result<Image> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("no frames to stack".into()))?;
    let c = first.channels();
    for f in frames {
        if f.dims() != first.dims() {
            return Err(Error::DimensionMismatch("frames differ in shape".into()));
        }
    }
    let total = c * frames.len();
    Ok(Image::from_fn(first.width(), first.height(), total, |col, row, px| {
        for (k, f) in frames.iter().enumerate() {
            px[k * c..(k + 1) * c].copy_from_slice(f.pixel(col, row));
        }
    }))
}

fn check_latent(req: &DenoiseRequest, target: &Image) -> Result<()> {
    if target.dims() != req.latent.dims() {
        return Err(Error::Denoiser(format!(
            "view {}: target grid {:?} does not match latent {:?}",
            req.view,
            target.dims(),
            req.latent.dims()
        )));
    }
    Ok(())
}

/// Moves the latent toward the encoded conditioning image, replicated over all frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn step(&self, req: &DenoiseRequest) -> Result<Image> {
        let enc = req.codec.encode(req.condition)?;
        let target = stack_frames(&vec![enc; req.frames])?;
        check_latent(req, &target)?;
        blend_toward(req.latent, &target, req.step)
    }
}

/// Motion produced by a [`FlowFieldDenoiser`].
#[derive(Debug, Clone)]
pub enum FlowTarget {
    /// A known panoramic video; each view's target is its projection.
    Panoramic(Arc<PanoVideo>),
    /// Image-space differential rotation of the masked region about its
    /// centroid, `angular_speed` radians per frame.
    ///
    /// Each view's speed is scaled by a factor drawn uniformly from
    /// `[1 − jitter, 1 + jitter]` with a generator seeded by `(seed, view)`,
    /// standing in for the sampling noise of a video model run per view.
    ImageSwirl { angular_speed: f64, jitter: f64 },
}

/// Deterministic denoiser that reaches a procedural target exactly after the
/// last step.
pub struct FlowFieldDenoiser {
    target: FlowTarget,
    cache: Mutex<HashMap<(usize, u64), Arc<Image>>>,
}

impl FlowFieldDenoiser {
    pub fn new(target: FlowTarget) -> Self {
        FlowFieldDenoiser {
            target,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn target(&self) -> &FlowTarget {
        &self.target
    }

    /// Per-frame target images for one view, before encoding.
    pub fn target_frames(
        &self,
        condition: &Image,
        mask: &Image,
        camera: &Camera,
        view: usize,
        frames: usize,
        seed: u64,
    ) -> Result<Vec<Image>> {
        match &self.target {
            FlowTarget::Panoramic(video) => {
                if video.len() != frames {
                    return Err(Error::Denoiser(format!(
                        "target video has {} frames, run needs {frames}",
                        video.len()
                    )));
                }
                let cam = camera.with_resolution(condition.width(), condition.height());
                Ok(video
                    .frames()
                    .iter()
                    .map(|f| project_perspective(f, &cam))
                    .collect())
            }
            FlowTarget::ImageSwirl {
                angular_speed,
                jitter,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (view as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let factor = 1.0 + jitter * (2.0 * rng.gen::<f64>() - 1.0);
                Ok((0..frames)
                    .map(|k| swirl_image(condition, mask, angular_speed * factor * k as f64))
                    .collect())
            }
        }
    }

    fn encoded_target(&self, req: &DenoiseRequest) -> Result<Arc<Image>> {
        let key = (req.view, fingerprint(req));
        if let Some(t) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(t.clone());
        }
        let frames = self.target_frames(
            req.condition,
            req.mask,
            req.camera,
            req.view,
            req.frames,
            req.seed,
        )?;
        let encoded = frames
            .iter()
            .map(|f| req.codec.encode(f))
            .collect::<Result<Vec<_>>>()?;
        let target = Arc::new(stack_frames(&encoded)?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, target.clone());
        Ok(target)
    }
}

fn fingerprint(req: &DenoiseRequest) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let a = req.camera.axis();
    for v in [a.x(), a.y(), a.z()] {
        v.to_bits().hash(&mut h);
    }
    req.latent.dims().hash(&mut h);
    req.condition.dims().hash(&mut h);
    req.frames.hash(&mut h);
    req.seed.hash(&mut h);
    for v in req.condition.data().iter().step_by(97) {
        v.to_bits().hash(&mut h);
    }
    for v in req.mask.data().iter().step_by(13) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

impl Denoiser for FlowFieldDenoiser {
    fn step(&self, req: &DenoiseRequest) -> Result<Image> {
        let target = self.encoded_target(req)?;
        check_latent(req, &target)?;
        blend_toward(req.latent, &target, req.step)
    }
}

/// Mask centroid and the largest distance of a masked pixel from it.
fn mask_disk(mask: &Image) -> Option<((f64, f64), f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(c, r, 0) >= 0.5 {
                sx += c as f64;
                sy += r as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let center = (sx / n as f64, sy / n as f64);
    let mut rmax: f64 = 0.0;
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(c, r, 0) >= 0.5 {
                rmax = rmax.max((c as f64 - center.0).hypot(r as f64 - center.1));
            }
        }
    }
    Some((center, rmax + 1.0))
}

/// Rotates the masked region of `img` about its centroid by `angle·(1 − r/r_max)`.
///
/// The angular velocity depends on radius only, so the flow is divergence free.
pub fn swirl_image(img: &Image, mask: &Image, angle: f64) -> Image {
    let Some(((cx, cy), rmax)) = mask_disk(mask) else {
        return img.clone();
    };
    if angle == 0.0 {
        return img.clone();
    }
    Image::from_fn(img.width(), img.height(), img.channels(), |c, r, px| {
        let (dx, dy) = (c as f64 - cx, r as f64 - cy);
        let rad = dx.hypot(dy);
        if mask.get(c, r, 0) < 0.5 || rad >= rmax {
            px.copy_from_slice(img.pixel(c, r));
            return;
        }
        let a = -angle * (1.0 - rad / rmax);
        let (s, co) = a.sin_cos();
        let sx = cx + co * dx - s * dy;
        let sy = cy + s * dx + co * dy;
        sample_bilinear_clamped(img, sx, sy, px);
    })
}

/// Animates a panorama by rotating the masked region on the sphere about its
/// mean direction, `angular_speed` radians per frame at the center and
/// falling off linearly to zero at the mask's angular radius.
pub fn advect_panorama(
    pano: &EquirectImage,
    mask: &Image,
    frames: usize,
    angular_speed: f64,
) -> Result<PanoVideo> {
    pano.ensure_panorama()?;
    if mask.width() != pano.width() || mask.height() != pano.height() {
        return Err(Error::DimensionMismatch("mask and panorama differ in size".into()));
    }
    let (w, h) = (pano.width(), pano.height());
    let mut sum = nalgebra::Vector3::zeros();
    let mut masked = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(c, r, 0) >= 0.5 {
                let d = texel_direction(w, h, c, r);
                // Texel solid angle is proportional to cos(latitude).
                sum += d.as_vector() * (1.0 - d.z() * d.z()).sqrt();
                masked.push((c, r, d));
            }
        }
    }
    let Some(axis) = Direction::from_vector(sum) else {
        return PanoVideo::new(vec![pano.clone(); frames]);
    };
    let radius = masked
        .iter()
        .map(|(_, _, d)| axis.angle_to(d))
        .fold(0.0f64, f64::max)
        + std::f64::consts::PI / h as f64;
    let out = (0..frames)
        .map(|k| {
            let theta = angular_speed * k as f64;
            let mut frame = pano.clone();
            if theta != 0.0 {
                for &(c, r, d) in &masked {
                    let a = -theta * (1.0 - axis.angle_to(&d) / radius);
                    let rot = nalgebra::Rotation3::from_axis_angle(
                        &nalgebra::Unit::new_unchecked(*axis.as_vector()),
                        a,
                    );
                    let src = Direction::from_unit(rot * d.as_vector());
                    sample_equirect_into(pano, &src, frame.pixel_mut(c, r));
                }
            }
            frame
        })
        .collect();
    PanoVideo::new(out)
}

#[derive(Serialize)]
struct DenoiseMetadata<'a> {
    step: usize,
    view: usize,
    #[serde(rename = "L")]
    frames: usize,
    c: usize,
    mask_path: &'a str,
    cond_image_path: &'a str,
}

/// Delegates each step to an external process over the file handshake.
///
/// Requests are keyed `{t}_{view}`; the latent goes to `req_{key}.p4dt`, the
/// conditioning image and mask to `req_{key}.cond.png` and `req_{key}.mask.png`.
pub struct ExternalProcessDenoiser {
    client: Mutex<HandshakeClient>,
    expected_steps: Option<usize>,
}

impl ExternalProcessDenoiser {
    pub fn new(config: HandshakeConfig, expected_steps: Option<usize>) -> Result<Self> {
        Ok(ExternalProcessDenoiser {
            client: Mutex::new(HandshakeClient::new(config)?),
            expected_steps,
        })
    }

    /// Writes the `DONE` sentinel.
    pub fn finish(&self) -> Result<()> {
        self.client.lock().expect("client lock").finish()
    }
}

impl Denoiser for ExternalProcessDenoiser {
    fn step(&self, req: &DenoiseRequest) -> Result<Image> {
        let client = self.client.lock().expect("client lock");
        let key = format!("{}_{}", req.step, req.view);
        let cond_path = client.request_path(&key, "cond.png");
        let mask_path = client.request_path(&key, "mask.png");
        let meta = DenoiseMetadata {
            step: req.step,
            view: req.view,
            frames: req.frames,
            c: req.channels,
            mask_path: &mask_path.to_string_lossy(),
            cond_image_path: &cond_path.to_string_lossy(),
        };
        let payloads = [
            ("p4dt", Tensor::from_image(req.latent).to_bytes()),
            ("cond.png", rgb_png_bytes(req.condition)?),
            ("mask.png", mask_png_bytes(req.mask)?),
        ];
        let out = client
            .exchange(&key, &payloads, &meta)?
            .into_image()
            .map_err(|e| Error::Denoiser(format!("response {key}: {e}")))?;
        if out.dims() != req.latent.dims() {
            return Err(Error::Denoiser(format!(
                "response {key} has shape {:?}, expected {:?}",
                out.dims(),
                req.latent.dims()
            )));
        }
        out.ensure_finite()
            .map_err(|e| Error::Denoiser(format!("response {key}: {e}")))?;
        Ok(out)
    }

    fn expected_steps(&self) -> Option<usize> {
        self.expected_steps
    }

    fn concurrent(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::animator::codec::IdentityCodec;

    fn request<'a>(
        latent: &'a Image,
        cond: &'a Image,
        mask: &'a Image,
        cam: &'a Camera,
        step: usize,
    ) -> DenoiseRequest<'a> {
        DenoiseRequest {
            latent,
            condition: cond,
            mask,
            step,
            total_steps: 5,
            view: 0,
            camera: cam,
            frames: 2,
            channels: 3,
            codec: &IdentityCodec,
            seed: 1,
        }
    }

    #[test]
    fn blend_reaches_target_after_all_steps() {
        let target = Image::filled(2, 2, 1, 0.3);
        let mut z = Image::filled(2, 2, 1, -4.0);
        for t in (1..=5).rev() {
            z = blend_toward(&z, &target, t).unwrap();
        }
        assert_eq!(z, target);
    }

    #[test]
    fn blend_is_linear_interpolation_oracle() {
        // After steps T..t the weight left on z_T is (t−1)/T.
        let z0 = Image::filled(1, 1, 1, 2.0);
        let target = Image::filled(1, 1, 1, 0.0);
        let mut z = z0.clone();
        for t in (3..=8).rev() {
            z = blend_toward(&z, &target, t).unwrap();
        }
        assert!((z.data()[0] - 2.0 * 2.0 / 8.0).abs() < 1e-6);
    }

    #[test]
    fn identity_denoiser_targets_condition() {
        let cam = Camera::from_fov(Direction::unit_y(), 80.0, 4).unwrap();
        let cond = Image::from_fn(4, 4, 3, |c, r, px| px.fill((c + r) as f32 / 8.0));
        let mask = Image::new(4, 4, 1);
        let z = Image::filled(4, 4, 6, 5.0);
        let out = IdentityDenoiser
            .step(&request(&z, &cond, &mask, &cam, 1))
            .unwrap();
        assert_eq!(out.channel_range(3, 3), cond);
        assert_eq!(out.channel_range(0, 3), cond);
    }

    #[test]
    fn swirl_leaves_unmasked_pixels_and_frame_zero() {
        let img = Image::from_fn(16, 16, 3, |c, r, px| px.fill(((c * 3 + r * 5) % 7) as f32 / 7.0));
        let mask = Image::from_fn(16, 16, 1, |c, r, px| {
            px[0] = ((c as f64 - 8.0).hypot(r as f64 - 8.0) < 5.0) as u8 as f32
        });
        assert_eq!(swirl_image(&img, &mask, 0.0), img);
        let s = swirl_image(&img, &mask, 0.7);
        for r in 0..16 {
            for c in 0..16 {
                if mask.get(c, r, 0) == 0.0 {
                    assert_eq!(s.pixel(c, r), img.pixel(c, r));
                }
            }
        }
        assert_ne!(s, img);
    }

    #[test]
    fn swirl_jitter_depends_on_view() {
        let den = FlowFieldDenoiser::new(FlowTarget::ImageSwirl {
            angular_speed: 0.3,
            jitter: 0.5,
        });
        let cam = Camera::from_fov(Direction::unit_y(), 80.0, 16).unwrap();
        let img = Image::from_fn(16, 16, 3, |c, r, px| px.fill(((c * 3 + r * 5) % 7) as f32 / 7.0));
        let mask = Image::filled(16, 16, 1, 1.0);
        let a = den.target_frames(&img, &mask, &cam, 0, 3, 9).unwrap();
        let b = den.target_frames(&img, &mask, &cam, 1, 3, 9).unwrap();
        let a2 = den.target_frames(&img, &mask, &cam, 0, 3, 9).unwrap();
        assert_eq!(a, a2);
        assert_eq!(a[0], b[0]);
        assert_ne!(a[2], b[2]);
    }

    #[test]
    fn advect_keeps_outside_of_mask() {
        let pano = Image::from_fn(32, 16, 3, |c, r, px| px.fill(((c + 2 * r) % 5) as f32 / 5.0));
        let mask = Image::from_fn(32, 16, 1, |c, r, px| {
            px[0] = ((10..16).contains(&c) && (5..10).contains(&r)) as u8 as f32
        });
        let video = advect_panorama(&pano, &mask, 3, 0.4).unwrap();
        assert_eq!(video.frame(0), &pano);
        for f in video.frames() {
            for r in 0..16 {
                for c in 0..32 {
                    if mask.get(c, r, 0) == 0.0 {
                        assert_eq!(f.pixel(c, r), pano.pixel(c, r));
                    }
                }
            }
        }
        assert_ne!(video.frame(2), &pano);
    }

    #[test]
    fn external_denoiser_round_trip() {
        use crate::pipeline::handshake::serve_requests;
        use crate::pipeline::tensor::read_tensor;
        use std::time::Duration;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().to_path_buf();
        let server = std::thread::spawn(move || {
            serve_requests(&path, Duration::from_millis(2), |key, dir| {
                let meta: serde_json::Value = serde_json::from_slice(
                    &std::fs::read(dir.join(format!("req_{key}.json"))).unwrap(),
                )
                .unwrap();
                assert!(std::path::Path::new(meta["cond_image_path"].as_str().unwrap()).exists());
                assert_eq!(meta["L"], 2);
                let t = read_tensor(&dir.join(format!("req_{key}.p4dt"))).unwrap();
                let dims = t.dims().to_vec();
                let data = t.data().iter().map(|v| v * 0.5).collect();
                Tensor::new(dims, data).ok()
            })
            .unwrap()
        });
        let den = ExternalProcessDenoiser::new(HandshakeConfig::new(dir.path()), None).unwrap();
        let cam = Camera::from_fov(Direction::unit_y(), 80.0, 4).unwrap();
        let cond = Image::filled(4, 4, 3, 0.5);
        let mask = Image::new(4, 4, 1);
        let z = Image::filled(4, 4, 6, 2.0);
        let out = den.step(&request(&z, &cond, &mask, &cam, 3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
        assert!(!den.concurrent());
        den.finish().unwrap();
        assert_eq!(server.join().unwrap(), 1);
    }
}
