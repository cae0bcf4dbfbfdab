//! Procedural ground truth: a textured room sphere around the viewer and a
//! textured blob moving along a short arc in front of it.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::animator::AnimRegionMask;
use crate::error::{Error, Result};
use crate::geom::{equirect_to_dir, Camera, Direction};
use crate::image::{texel_direction, Image, PanoVideo};

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub room_radius: f64,
    /// Room center relative to the viewer; nonzero so depth varies with direction.
    pub room_center: [f64; 3],
    pub blob_radius: f64,
    /// Blob center at the middle of the clip.
    pub blob_center: [f64; 3],
    /// Half length of the blob's arc.
    pub blob_travel: f64,
    /// Angular frequency of the room texture (radians per unit of surface normal).
    pub texture_freq: f64,
    /// Sub-samples per texel side when rendering color.
    pub supersample: usize,
    /// Extra angular margin around the blob's swept footprint, degrees.
    pub mask_margin_deg: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 512,
            height: 256,
            frames: 4,
            room_radius: 4.0,
            room_center: [0.5, -0.4, 0.3],
            blob_radius: 0.45,
            blob_center: [0.3, 2.2, 0.2],
            blob_travel: 0.35,
            texture_freq: 9.0,
            supersample: 3,
            mask_margin_deg: 4.0,
            seed: 0,
        }
    }
}

/// Result of casting one ray into the scene.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub distance: f64,
    pub color: [f32; 3],
    pub blob: bool,
}

#[derive(Debug, Clone)]
struct Wave {
    k: Vector3<f64>,
    phase: f64,
    amp: [f64; 3],
    freq: f64,
}

fn shade(waves: &[Wave], base: [f64; 3], n: &Vector3<f64>) -> [f32; 3] {
    let mut c = base;
    for w in waves {
        let s = (w.freq * w.k.dot(n) + w.phase).sin();
        for ch in 0..3 {
            c[ch] += w.amp[ch] * s;
        }
    }
    c.map(|v| v.clamp(0.0, 1.0) as f32)
}

/// The procedural scene, evaluable at any frame and from any viewpoint.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    config: SceneConfig,
    room_waves: Vec<Wave>,
    blob_waves: Vec<Wave>,
    travel_dir: Vector3<f64>,
}

impl SyntheticScene {
    pub fn new(config: SceneConfig) -> Result<Self> {
        if config.width != 2 * config.height || config.height == 0 {
            return Err(Error::InvalidInput(format!(
                "scene panorama must be 2:1, got {}×{}",
                config.width, config.height
            )));
        }
        if config.frames == 0 || config.supersample == 0 {
            return Err(Error::InvalidInput("frames and supersample must be ≥ 1".into()));
        }
        let room_c = Vector3::from(config.room_center);
        let blob_c = Vector3::from(config.blob_center);
        let reach = (blob_c - room_c).norm() + config.blob_travel + config.blob_radius;
        if reach >= config.room_radius || room_c.norm() >= config.room_radius {
            return Err(Error::InvalidInput("blob or viewer outside the room".into()));
        }
        if blob_c.norm() <= config.blob_travel + config.blob_radius {
            return Err(Error::InvalidInput("blob path reaches the viewer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let unit = |rng: &mut ChaCha8Rng| loop {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        };
        let waves = |n: usize, freq: f64, amp: f64, rng: &mut ChaCha8Rng| -> Vec<Wave> {
            (0..n)
                .map(|i| Wave {
                    k: unit(rng),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    amp: [0, 1, 2].map(|_| amp * rng.gen_range(0.4..1.0)),
                    freq: freq * (1.0 + 0.5 * i as f64 / n as f64),
                })
                .collect()
        };
        let room_waves = waves(4, config.texture_freq, 0.09, &mut rng);
        let blob_waves = waves(2, 5.0, 0.12, &mut rng);
        // The blob moves across the line of sight.
        let up = Vector3::z();
        let travel_dir = blob_c.cross(&up).try_normalize(1e-9).unwrap_or_else(Vector3::x);
        Ok(SyntheticScene {
            config,
            room_waves,
            blob_waves,
            travel_dir,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    /// Blob center at frame `k`; the blob sweeps `±blob_travel` over the clip.
    pub fn blob_center(&self, k: usize) -> Vector3<f64> {
        let l = self.config.frames;
        let s = if l == 1 {
            0.0
        } else {
            2.0 * k as f64 / (l - 1) as f64 - 1.0
        };
        Vector3::from(self.config.blob_center) + self.travel_dir * (s * self.config.blob_travel)
    }

    /// Casts a ray from `origin` along unit `dir` at frame `k`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, k: usize) -> Hit {
        let bc = self.blob_center(k);
        let r = self.config.blob_radius;
        let oc = bc - origin;
        let b = dir.dot(&oc);
        let disc = b * b - (oc.norm_squared() - r * r);
        if disc > 0.0 {
            let t = b - disc.sqrt();
            if t > 0.0 {
                let n = (origin + dir * t - bc) / r;
                return Hit {
                    distance: t,
                    color: shade(&self.blob_waves, [0.78, 0.36, 0.22], &n),
                    blob: true,
                };
            }
        }
        let rc = Vector3::from(self.config.room_center);
        let oc = rc - origin;
        let b = dir.dot(&oc);
        let disc = (b * b - (oc.norm_squared() - self.config.room_radius.powi(2))).max(0.0);
        let t = b + disc.sqrt();
        let n = (origin + dir * t - rc) / self.config.room_radius;
        Hit {
            distance: t,
            color: shade(&self.room_waves, [0.5, 0.5, 0.5], &n),
            blob: false,
        }
    }

    fn frame_at(&self, k: usize) -> (Image, Image) {
        let (w, h, ss) = (self.config.width, self.config.height, self.config.supersample);
        let origin = Vector3::zeros();
        let mut rgb = Image::new(w, h, 3);
        let mut depth = Image::new(w, h, 1);
        rgb.data_mut()
            .par_chunks_mut(w * 3)
            .zip(depth.data_mut().par_chunks_mut(w))
            .enumerate()
            .for_each(|(row, (line, dline))| {
                for col in 0..w {
                    let mut acc = [0.0f32; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let u = -1.0 + 2.0 * (col as f64 + (sx as f64 + 0.5) / ss as f64) / w as f64;
                            let v = 1.0 - 2.0 * (row as f64 + (sy as f64 + 0.5) / ss as f64) / h as f64;
                            let d = equirect_to_dir(u, v);
                            let hit = self.cast(&origin, d.as_vector(), k);
                            for ch in 0..3 {
                                acc[ch] += hit.color[ch];
                            }
                        }
                    }
                    let n = (ss * ss) as f32;
                    for ch in 0..3 {
                        line[col * 3 + ch] = acc[ch] / n;
                    }
                    let d = texel_direction(w, h, col, row);
                    dline[col] = self.cast(&origin, d.as_vector(), k).distance as f32;
                }
            });
        (rgb, depth)
    }

    /// Ground-truth panoramic color video.
    pub fn video(&self) -> Result<PanoVideo> {
        PanoVideo::new((0..self.config.frames).map(|k| self.frame_at(k).0).collect())
    }

    /// Ground-truth color and ray-distance depth videos.
    pub fn video_and_depth(&self) -> Result<(PanoVideo, Vec<Image>)> {
        let (rgb, depth): (Vec<_>, Vec<_>) =
            (0..self.config.frames).map(|k| self.frame_at(k)).unzip();
        Ok((PanoVideo::new(rgb)?, depth))
    }

    /// Ray-distance depth panorama of frame `k` at an arbitrary resolution.
    pub fn depth_panorama(&self, k: usize, width: usize, height: usize) -> Image {
        let origin = Vector3::zeros();
        Image::from_fn(width, height, 1, |c, r, px| {
            let d = texel_direction(width, height, c, r);
            px[0] = self.cast(&origin, d.as_vector(), k).distance as f32;
        })
    }

    /// Union of the blob's angular footprint over all frames, plus the margin.
    pub fn mask(&self) -> AnimRegionMask {
        let (w, h) = (self.config.width, self.config.height);
        let margin = self.config.mask_margin_deg.to_radians();
        let disks: Vec<(Direction, f64)> = (0..self.config.frames)
            .map(|k| {
                let c = self.blob_center(k);
                let rad = (self.config.blob_radius / c.norm()).asin();
                (Direction::from_vector(c).expect("blob away from viewer"), rad + margin)
            })
            .collect();
        let img = Image::from_fn(w, h, 1, |c, r, px| {
            let d = texel_direction(w, h, c, r);
            px[0] = disks.iter().any(|(cd, rad)| cd.angle_to(&d) <= *rad) as u8 as f32;
        });
        AnimRegionMask::new(img).expect("binary by construction")
    }

    /// Perspective color and ray-distance depth from `position` at frame `k`.
    pub fn render_view(&self, cam: &Camera, position: &Vector3<f64>, k: usize) -> (Image, Image) {
        let (w, h, ss) = (cam.res_w(), cam.res_h(), self.config.supersample);
        let mut rgb = Image::new(w, h, 3);
        let mut depth = Image::new(w, h, 1);
        rgb.data_mut()
            .par_chunks_mut(w * 3)
            .zip(depth.data_mut().par_chunks_mut(w))
            .enumerate()
            .for_each(|(row, (line, dline))| {
                for col in 0..w {
                    let mut acc = [0.0f32; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let x = 2.0 * (col as f64 + (sx as f64 + 0.5) / ss as f64) / w as f64 - 1.0;
                            let y = 1.0 - 2.0 * (row as f64 + (sy as f64 + 0.5) / ss as f64) / h as f64;
                            let d = cam.ray_vector(x, y).normalize();
                            let hit = self.cast(position, &d, k);
                            for ch in 0..3 {
                                acc[ch] += hit.color[ch];
                            }
                        }
                    }
                    let n = (ss * ss) as f32;
                    for ch in 0..3 {
                        line[col * 3 + ch] = acc[ch] / n;
                    }
                    let (x, y) = cam.pixel_center(col, row);
                    let d = cam.ray_vector(x, y).normalize();
                    dline[col] = self.cast(position, &d, k).distance as f32;
                }
            });
        (rgb, depth)
    }
}
