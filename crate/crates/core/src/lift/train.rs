use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_geo, loss_rgb, loss_sem, loss_temporal, FeatureExtractor};
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::geom::{icosphere_samples, Camera};
use crate::image::{project_perspective, Image, PanoVideo};
use crate::optim::{exp_decay, Adam};
use crate::splat::{
    rasterize, rasterize_backward, unproject_init, GaussianGrads, GaussianSet, RenderSettings,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftConfig {
    pub lambda_rgb: f64,
    pub lambda_temporal: f64,
    pub lambda_sem: f64,
    pub lambda_geo: f64,
    /// Weight of L1 inside the RGB term; SSIM gets the rest.
    pub ssim_mix: f64,
    pub iters_per_timestamp: usize,
    /// First iteration of the regularized stage.
    pub stage2_start: usize,
    /// `(iteration, α)` steps of the disturbance range, increasing.
    pub alpha_schedule: Vec<(usize, f64)>,
    /// Position step size as a multiple of the scene extent, start and end.
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    /// Rotation, scale, color and opacity steps decay to this fraction by the
    /// end of each frame.
    pub lr_final_factor: f64,
    /// Sphere samples per icosahedron face for the first frame's init.
    pub per_face: usize,
    pub seed: u64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            lambda_rgb: 1.0,
            lambda_temporal: 0.05,
            lambda_sem: 0.05,
            lambda_geo: 0.05,
            ssim_mix: 0.8,
            iters_per_timestamp: 10000,
            stage2_start: 5400,
            alpha_schedule: vec![(5400, 0.05), (6600, 0.1), (9000, 0.2)],
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_color: 2.5e-3,
            lr_opacity: 0.05,
            lr_final_factor: 1.0,
            per_face: 1000,
            seed: 0,
        }
    }
}

impl LiftConfig {
    /// Default weights with the stage boundary and disturbance steps placed at
    /// the same fractions of a shorter budget.
    pub fn scaled(iters: usize) -> Self {
        let at = |frac: f64| ((iters as f64 * frac).round() as usize).min(iters);
        let mut alpha_schedule: Vec<(usize, f64)> = Vec::new();
        for step in [(at(0.54), 0.05), (at(0.66), 0.1), (at(0.90), 0.2)] {
            // Tiny budgets can merge steps; the larger range wins.
            if alpha_schedule.last().is_some_and(|l| l.0 >= step.0) {
                alpha_schedule.pop();
            }
            alpha_schedule.push(step);
        }
        LiftConfig {
            iters_per_timestamp: iters,
            stage2_start: at(0.54),
            alpha_schedule,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.lambda_rgb,
            self.lambda_temporal,
            self.lambda_sem,
            self.lambda_geo,
        ];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.ssim_mix) {
            return Err(Error::Config("ssim_mix must lie in [0, 1]".into()));
        }
        if self.iters_per_timestamp == 0 {
            return Err(Error::Config("iters_per_timestamp must be positive".into()));
        }
        if self
            .alpha_schedule
            .windows(2)
            .any(|w| w[1].0 <= w[0].0)
        {
            return Err(Error::Config("disturbance schedule thresholds must increase".into()));
        }
        if self.alpha_schedule.iter().any(|(_, a)| !(*a >= 0.0)) {
            return Err(Error::Config("disturbance ranges must be non-negative".into()));
        }
        let lrs = [
            self.lr_position,
            self.lr_position_final,
            self.lr_rotation,
            self.lr_scale,
            self.lr_color,
            self.lr_opacity,
            self.lr_final_factor,
        ];
        if lrs.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || self.lr_final_factor == 0.0 {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.per_face == 0 {
            return Err(Error::Config("per_face must be positive".into()));
        }
        Ok(())
    }

    /// Disturbance range at `it`; zero before the first step.
    pub fn alpha_at(&self, it: usize) -> f64 {
        self.alpha_schedule
            .iter()
            .take_while(|(start, _)| *start <= it)
            .last()
            .map_or(0.0, |(_, a)| *a)
    }

    pub fn in_stage2(&self, it: usize) -> bool {
        it >= self.stage2_start
    }
}

/// Per-term values of one iteration, unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LiftTerms {
    pub rgb: f64,
    pub temporal: f64,
    pub sem: f64,
    pub geo: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct LiftResult {
    pub sets: Vec<GaussianSet>,
    /// Mean training-view PSNR of each frame.
    pub psnr: Vec<f64>,
    /// Per frame, the terms of every `TRACE_EVERY`-th iteration.
    pub traces: Vec<Vec<LiftTerms>>,
}

pub const TRACE_EVERY: usize = 10;

/// Training views of one frame: color and, when a depth map is given, depth.
struct Targets {
    rgb: Vec<Image>,
    depth: Vec<Image>,
}

fn targets(pano: &Image, depth: &Image, cams: &[Camera]) -> Targets {
    Targets {
        rgb: cams.iter().map(|c| project_perspective(pano, c)).collect(),
        depth: cams.iter().map(|c| project_perspective(depth, c)).collect(),
    }
}

/// Mean extent of the scene seen from the origin.
fn scene_extent(g: &GaussianSet) -> f64 {
    let n = g.len().max(1) as f64;
    (0..g.len()).map(|i| g.position(i).norm()).sum::<f64>() / n
}

struct Optimizers {
    position: Adam,
    rotation: Adam,
    scale: Adam,
    color: Adam,
    opacity: Adam,
}

impl Optimizers {
    fn new(n: usize) -> Self {
        Optimizers {
            position: Adam::with_eps(3 * n, 1e-15),
            rotation: Adam::with_eps(4 * n, 1e-15),
            scale: Adam::with_eps(3 * n, 1e-15),
            color: Adam::with_eps(3 * n, 1e-15),
            opacity: Adam::with_eps(n, 1e-15),
        }
    }
}

/// Mean PSNR of `g` over the training views.
pub fn training_psnr(
    g: &GaussianSet,
    cams: &[Camera],
    targets: &[Image],
    settings: &RenderSettings,
) -> Result<f64> {
    let origin = Vector3::zeros();
    let mut total = 0.0;
    for (cam, target) in cams.iter().zip(targets) {
        let r = rasterize(g, cam, &origin, settings)?;
        total += psnr(&r.rgb, target)?;
    }
    Ok(total / cams.len().max(1) as f64)
}

/// Optimizes one Gaussian set per frame, each starting from its predecessor.
pub fn lift(
    video: &PanoVideo,
    depths: &[Image],
    cams: &[Camera],
    config: &LiftConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<LiftResult> {
    lift_with(video, depths, cams, config, extractor, |_, _, _| Ok(()))
}

/// [`lift`] calling `on_frame(t, set, psnr)` as each frame finishes.
pub fn lift_with(
    video: &PanoVideo,
    depths: &[Image],
    cams: &[Camera],
    config: &LiftConfig,
    extractor: &dyn FeatureExtractor,
    mut on_frame: impl FnMut(usize, &GaussianSet, f64) -> Result<()>,
) -> Result<LiftResult> {
    config.validate()?;
    if video.is_empty() {
        return Err(Error::InvalidInput("empty video".into()));
    }
    if depths.len() != video.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} depth maps for {} frames",
            depths.len(),
            video.len()
        )));
    }
    if cams.is_empty() {
        return Err(Error::InvalidInput("no training views".into()));
    }
    let settings = RenderSettings::default();
    let sampling = icosphere_samples(config.per_face)?;
    let mut result = LiftResult {
        sets: Vec::with_capacity(video.len()),
        psnr: Vec::with_capacity(video.len()),
        traces: Vec::with_capacity(video.len()),
    };
    for t in 0..video.len() {
        let tg = targets(video.frame(t), &depths[t], cams);
        let (init, previous) = match result.sets.last() {
            None => (unproject_init(video.frame(0), &depths[0], &sampling)?, None),
            Some(prev) => {
                let origin = Vector3::zeros();
                let renders = cams
                    .iter()
                    .map(|c| rasterize(prev, c, &origin, &settings).map(|r| r.rgb))
                    .collect::<Result<Vec<_>>>()?;
                (prev.clone(), Some(renders))
            }
        };
        let seed = config.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let (set, trace) = optimize_frame(
            init,
            cams,
            &tg,
            previous.as_deref(),
            config,
            extractor,
            &settings,
            seed,
        )
        .map_err(|e| match e {
            Error::Divergence(msg) => Error::Divergence(format!("frame {t}: {msg}")),
            other => other,
        })?;
        let p = training_psnr(&set, cams, &tg.rgb, &settings)?;
        log::info!("frame {t}: training-view PSNR {p:.2} dB");
        on_frame(t, &set, p)?;
        result.sets.push(set);
        result.psnr.push(p);
        result.traces.push(trace);
    }
    Ok(result)
}

fn format_trace(trace: &[LiftTerms]) -> String {
    trace
        .iter()
        .rev()
        .take(5)
        .rev()
        .map(|t| {
            format!(
                "[rgb {:.4e} temporal {:.4e} sem {:.4e} geo {:.4e}]",
                t.rgb, t.temporal, t.sem, t.geo
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[allow(clippy::too_many_arguments)]
fn optimize_frame(
    mut g: GaussianSet,
    cams: &[Camera],
    tg: &Targets,
    previous: Option<&[Image]>,
    config: &LiftConfig,
    extractor: &dyn FeatureExtractor,
    settings: &RenderSettings,
    seed: u64,
) -> Result<(GaussianSet, Vec<LiftTerms>)> {
    let n = g.len();
    let extent = scene_extent(&g);
    let mut opt = Optimizers::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Vector3::zeros();
    let iters = config.iters_per_timestamp;
    let mut trace = Vec::with_capacity(iters / TRACE_EVERY + 1);
    for it in 0..iters {
        let v = rng.gen_range(0..cams.len());
        let cam = &cams[v];
        let r0 = rasterize(&g, cam, &origin, settings)?;
        let mut terms = LiftTerms::default();

        let rgb = loss_rgb(&r0.rgb, &tg.rgb[v], config.ssim_mix)?;
        terms.rgb = rgb.value;
        let mut grad_rgb = scaled(rgb.grad, config.lambda_rgb);

        if let Some(prev) = previous.filter(|_| config.lambda_temporal > 0.0) {
            let lt = loss_temporal(&r0.rgb, &prev[v])?;
            terms.temporal = lt.value;
            add_scaled(&mut grad_rgb, &lt.grad, config.lambda_temporal);
        }

        let stage2 = config.in_stage2(it);
        let mut grad_depth = None;
        if stage2 && config.lambda_geo > 0.0 {
            let lg = loss_geo(&r0.depth, &tg.depth[v])?;
            terms.geo = lg.value;
            grad_depth = Some(scaled(lg.grad, config.lambda_geo));
        }

        let mut perturbed = None;
        let alpha = config.alpha_at(it);
        if stage2 && config.lambda_sem > 0.0 && alpha > 0.0 {
            let delta = Vector3::new(
                rng.gen_range(-alpha..=alpha),
                rng.gen_range(-alpha..=alpha),
                rng.gen_range(-alpha..=alpha),
            );
            let rd = rasterize(&g, cam, &delta, settings)?;
            let (ls, ga, gb) = loss_sem(extractor, &r0.rgb, &rd.rgb)?;
            terms.sem = ls;
            add_scaled(&mut grad_rgb, &ga, config.lambda_sem);
            perturbed = Some((rd, scaled(gb, config.lambda_sem)));
        }

        terms.total = config.lambda_rgb * terms.rgb
            + config.lambda_temporal * terms.temporal
            + config.lambda_sem * terms.sem
            + config.lambda_geo * terms.geo;
        if it % TRACE_EVERY == 0 {
            trace.push(terms);
        }
        if !terms.total.is_finite() {
            trace.push(terms);
            return Err(Error::Divergence(format!(
                "non-finite loss at iteration {it}; last terms {}",
                format_trace(&trace)
            )));
        }

        let mut grads = rasterize_backward(&g, &r0.state, &grad_rgb, grad_depth.as_ref())?;
        if let Some((rd, gb)) = perturbed {
            let gd = rasterize_backward(&g, &rd.state, &gb, None)?;
            grads.add_scaled(&gd, 1.0);
        }
        step(&mut g, &grads, &mut opt, config, extent, it);
        if g.check().is_err() {
            return Err(Error::Divergence(format!(
                "non-finite parameters at iteration {it}; last terms {}",
                format_trace(&trace)
            )));
        }
    }
    Ok((g, trace))
}

fn step(
    g: &mut GaussianSet,
    grads: &GaussianGrads,
    opt: &mut Optimizers,
    config: &LiftConfig,
    extent: f64,
    it: usize,
) {
    let lr_pos = extent
        * exp_decay(
            config.lr_position,
            config.lr_position_final,
            it,
            config.iters_per_timestamp,
        );
    let f = exp_decay(1.0, config.lr_final_factor, it, config.iters_per_timestamp);
    opt.position.step(&mut g.positions, &grads.positions, lr_pos);
    opt.rotation
        .step(&mut g.rotations, &grads.rotations, f * config.lr_rotation);
    opt.scale
        .step(&mut g.log_scales, &grads.log_scales, f * config.lr_scale);
    opt.color.step(&mut g.colors, &grads.colors, f * config.lr_color);
    opt.opacity
        .step(&mut g.opacity_logits, &grads.opacity_logits, f * config.lr_opacity);
    g.normalize_rotations();
}

fn scaled(mut img: Image, s: f64) -> Image {
    img.data_mut().iter_mut().for_each(|v| *v = (*v as f64 * s) as f32);
    img
}

fn add_scaled(acc: &mut Image, other: &Image, s: f64) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a = (*a as f64 + s * *b as f64) as f32;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: usize,
    pub config_hash: String,
    pub psnr: Vec<f64>,
}

pub fn checkpoint_name(t: usize) -> String {
    format!("frame_{t:03}.ply")
}

/// Writes one PLY per frame and `manifest.json` into `dir`.
pub fn write_checkpoints(dir: &Path, result: &LiftResult, config_hash: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, g) in result.sets.iter().enumerate() {
        g.write_ply(&dir.join(checkpoint_name(t)))?;
    }
    write_manifest(
        dir,
        &Manifest {
            frames: result.sets.len(),
            config_hash: config_hash.to_string(),
            psnr: result.psnr.clone(),
        },
    )
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a checkpoint directory back into its frame sets and manifest.
pub fn read_checkpoints(dir: &Path) -> Result<(Vec<GaussianSet>, Manifest)> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let sets = (0..manifest.frames)
        .map(|t| GaussianSet::read_ply(&dir.join(checkpoint_name(t))))
        .collect::<Result<Vec<_>>>()?;
    Ok((sets, manifest))
}
