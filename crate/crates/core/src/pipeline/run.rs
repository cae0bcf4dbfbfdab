//! Subcommand implementations over on-disk scene directories.
//!
//! ```text
//! pano.png, mask.png      still panorama and animated region
//! frames/frame_NNN.png    panoramic video
//! depth/depth_NNN.p4dt    ray-distance depth (plus depth_NNN.png preview)
//! gaussians/              one PLY per frame and manifest.json
//! render/frame_NNN.png    renders from a chosen camera
//! manifest.json           written by every subcommand
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::Serialize;

use super::config::{PipelineConfig, DENOISER_DIR_ENV, DEPTH_DIR_ENV};
use super::handshake::HandshakeConfig;
use super::synth::SyntheticScene;
use super::tensor::{read_tensor, write_tensor, Tensor};
use crate::align::{align, ExternalDepth, MonoDepth, SyntheticDepth};
use crate::animator::{
    animate, AnimRegionMask, AnimateOptions, Codec, DenoiseSchedule, Denoiser,
    ExternalProcessDenoiser, FlowFieldDenoiser, FlowTarget, IdentityCodec, IdentityDenoiser,
    PoolCodec,
};
use crate::error::{Error, Result};
use crate::eval::{compare_videos, MetricsReport};
use crate::geom::{camera_fan, Camera, Direction};
use crate::image::{
    read_mask_png, read_rgb_png, write_gray16_png, write_mask_png, write_rgb_png, Image, PanoVideo,
};
use crate::lift::{lift_with, read_checkpoints, write_manifest, Manifest, PyramidFeatures};
use crate::splat::{rasterize, RenderSettings};

pub const LOCK_FILE: &str = ".panodyn.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    frames: usize,
}

fn write_run_manifest(dir: &Path, command: &str, cfg: &PipelineConfig, frames: usize) -> Result<()> {
    let path = dir.join("manifest.json");
    let m = RunManifest {
        command,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        frames,
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:03}.png")
}

fn depth_name(t: usize) -> String {
    format!("depth_{t:03}.p4dt")
}

pub fn write_frames(dir: &Path, frames: &[Image]) -> Result<()> {
    ensure_dir(dir)?;
    for (t, f) in frames.iter().enumerate() {
        write_rgb_png(f, &dir.join(frame_name(t)))?;
    }
    Ok(())
}

/// Reads `frame_000.png`, `frame_001.png`, … until the first gap.
pub fn read_frames(dir: &Path) -> Result<Vec<Image>> {
    let mut frames = Vec::new();
    loop {
        let p = dir.join(frame_name(frames.len()));
        if !p.exists() {
            break;
        }
        frames.push(read_rgb_png(&p)?);
    }
    if frames.is_empty() {
        return Err(Error::InvalidInput(format!("no frames in {}", dir.display())));
    }
    Ok(frames)
}

pub fn write_depths(dir: &Path, depths: &[Image]) -> Result<()> {
    ensure_dir(dir)?;
    let (lo, hi) = depths
        .iter()
        .flat_map(|d| d.data().iter().copied())
        .fold((f32::INFINITY, 0.0f32), |(lo, hi), v| (lo.min(v), hi.max(v)));
    for (t, d) in depths.iter().enumerate() {
        write_tensor(&dir.join(depth_name(t)), &Tensor::from_image(d))?;
        write_gray16_png(d, lo, hi, &dir.join(format!("depth_{t:03}.png")))?;
    }
    Ok(())
}

pub fn read_depths(dir: &Path, frames: usize) -> Result<Vec<Image>> {
    (0..frames)
        .map(|t| read_tensor(&dir.join(depth_name(t)))?.into_image())
        .collect()
}

/// `synth`: ground-truth still, mask, video and depth of the procedural scene.
pub fn run_synth(cfg: &PipelineConfig, out: &Path) -> Result<SyntheticScene> {
    let _lock = OutputLock::acquire(out)?;
    let scene = SyntheticScene::new(cfg.scene_config())?;
    let (video, depth) = scene.video_and_depth()?;
    write_rgb_png(video.frame(0), &out.join("pano.png"))?;
    write_mask_png(scene.mask().image(), &out.join("mask.png"))?;
    write_frames(&out.join("frames"), video.frames())?;
    write_depths(&out.join("depth"), &depth)?;
    write_run_manifest(out, "synth", cfg, video.len())?;
    Ok(scene)
}

fn external_dir(var: &str) -> Result<PathBuf> {
    std::env::var_os(var)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("external component selected but {var} is not set")))
}

fn make_codec(cfg: &PipelineConfig) -> Box<dyn Codec> {
    match cfg.animate.codec.as_str() {
        "pool" => Box::new(PoolCodec {
            factor: cfg.animate.codec_factor,
        }),
        _ => Box::new(IdentityCodec),
    }
}

/// `animate`: `pano.png` + `mask.png` from `input` → `out/frames/`.
pub fn run_animate(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<PanoVideo> {
    let pano = read_rgb_png(&input.join("pano.png"))?;
    let mask = AnimRegionMask::new(read_mask_png(&input.join("mask.png"))?)?;
    let _lock = OutputLock::acquire(out)?;
    let a = &cfg.animate;
    let external = match a.denoiser.as_str() {
        "external" => Some(ExternalProcessDenoiser::new(
            HandshakeConfig::new(external_dir(DENOISER_DIR_ENV)?),
            Some(a.steps),
        )?),
        _ => None,
    };
    let builtin: Box<dyn Denoiser> = match a.denoiser.as_str() {
        "identity" | "external" => Box::new(IdentityDenoiser),
        "swirl" => Box::new(FlowFieldDenoiser::new(FlowTarget::ImageSwirl {
            angular_speed: a.swirl_speed,
            jitter: a.swirl_jitter,
        })),
        _ => {
            let scene = SyntheticScene::new(cfg.scene_config())?;
            Box::new(FlowFieldDenoiser::new(FlowTarget::Panoramic(Arc::new(scene.video()?))))
        }
    };
    let denoiser: &dyn Denoiser = match &external {
        Some(e) => e,
        None => builtin.as_ref(),
    };
    let codec = make_codec(cfg);
    let cams = camera_fan(cfg.fan_fov, a.res)?;
    let video = animate(
        &pano,
        &mask,
        denoiser,
        codec.as_ref(),
        DenoiseSchedule { total_steps: a.steps },
        &cams,
        AnimateOptions {
            frames: cfg.scene.frames,
            seed: cfg.module_seed("animate"),
        },
    )?;
    if let Some(d) = &external {
        d.finish()?;
    }
    write_frames(&out.join("frames"), video.frames())?;
    write_run_manifest(out, "animate", cfg, video.len())?;
    Ok(video)
}

/// `align`: `input/frames/` → `out/depth/`.
pub fn run_align(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<Image>> {
    let video = PanoVideo::new(read_frames(&input.join("frames"))?)?;
    let _lock = OutputLock::acquire(out)?;
    let cams = camera_fan(cfg.fan_fov, cfg.fan_res)?;
    let result = match cfg.depth.estimator.as_str() {
        "external" => {
            let est = ExternalDepth::new(HandshakeConfig::new(external_dir(DEPTH_DIR_ENV)?))?;
            let r = align(&video, &cams, &est, &cfg.align);
            est.finish()?;
            r?
        }
        _ => {
            let scene = SyntheticScene::new(cfg.scene_config())?;
            let est = SyntheticDepth::corrupted(
                scene,
                cams.len(),
                &cfg.depth.corruption(cfg.module_seed("depth")),
            );
            align(&video, &cams, &est as &dyn MonoDepth, &cfg.align)?
        }
    };
    log::info!(
        "alignment loss {:.4e} -> {:.4e}",
        result.initial_loss,
        result.final_loss
    );
    write_depths(&out.join("depth"), &result.depths)?;
    write_run_manifest(out, "align", cfg, result.depths.len())?;
    Ok(result.depths)
}

/// `lift`: `input/frames/` + `input/depth/` → `out/gaussians/`.
pub fn run_lift(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<f64>> {
    let frames = read_frames(&input.join("frames"))?;
    let depths = read_depths(&input.join("depth"), frames.len())?;
    let video = PanoVideo::new(frames)?;
    let _lock = OutputLock::acquire(out)?;
    let cams = camera_fan(cfg.fan_fov, cfg.fan_res)?;
    let dir = out.join("gaussians");
    ensure_dir(&dir)?;
    let hash = cfg.hash();
    let mut psnrs = Vec::new();
    let extractor = PyramidFeatures::default();
    lift_with(&video, &depths, &cams, &cfg.lift_config(), &extractor, |t, g, p| {
        g.write_ply(&dir.join(crate::lift::checkpoint_name(t)))?;
        psnrs.push(p);
        write_manifest(
            &dir,
            &Manifest {
                frames: psnrs.len(),
                config_hash: hash.clone(),
                psnr: psnrs.clone(),
            },
        )
    })?;
    write_run_manifest(out, "lift", cfg, psnrs.len())?;
    Ok(psnrs)
}

/// Camera for the `render` subcommand.
#[derive(Debug, Clone)]
pub struct RenderCamera {
    pub camera: Camera,
    pub offset: Vector3<f64>,
}

impl RenderCamera {
    /// Fan view `index` of the render settings.
    pub fn fan_view(cfg: &PipelineConfig, index: usize, offset: [f64; 3]) -> Result<Self> {
        let cams = camera_fan(cfg.render.fov, cfg.render.res)?;
        let camera = cams.get(index).cloned().ok_or_else(|| {
            Error::InvalidInput(format!("fan view {index} out of range 0..{}", cams.len()))
        })?;
        Ok(RenderCamera {
            camera,
            offset: offset.into(),
        })
    }

    pub fn looking_at(cfg: &PipelineConfig, dir: [f64; 3], offset: [f64; 3]) -> Result<Self> {
        let axis = Direction::new(dir[0], dir[1], dir[2])
            .ok_or_else(|| Error::InvalidCamera("zero view direction".into()))?;
        Ok(RenderCamera {
            camera: Camera::from_fov(axis, cfg.render.fov, cfg.render.res)?,
            offset: offset.into(),
        })
    }
}

/// `render`: `input/gaussians/` → `out/render/` seen from `cam`.
pub fn run_render(
    cfg: &PipelineConfig,
    input: &Path,
    out: &Path,
    cam: &RenderCamera,
) -> Result<Vec<Image>> {
    let (sets, _) = read_checkpoints(&input.join("gaussians"))?;
    let _lock = OutputLock::acquire(out)?;
    let settings = RenderSettings::default();
    let frames = sets
        .iter()
        .map(|g| rasterize(g, &cam.camera, &cam.offset, &settings).map(|r| r.rgb))
        .collect::<Result<Vec<_>>>()?;
    let clamped: Vec<Image> = frames
        .iter()
        .map(|f| {
            let mut c = f.clone();
            c.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            c
        })
        .collect();
    write_frames(&out.join("render"), &clamped)?;
    write_run_manifest(out, "render", cfg, frames.len())?;
    Ok(frames)
}

/// `eval`: compares `candidate/` frames against `reference/` frames.
pub fn run_eval(candidate: &Path, reference: &Path, out: &Path) -> Result<MetricsReport> {
    let a = read_frames(candidate)?;
    let b = read_frames(reference)?;
    let report = compare_videos(&a, &b)?;
    ensure_dir(out)?;
    let path = out.join("metrics.json");
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
