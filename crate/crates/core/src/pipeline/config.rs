//! Flat `key = value` pipeline configuration.
//!
//! One setting per line, `#` starts a comment, keys are dotted
//! (`section.name`). Unknown keys and unparsable values are rejected. Every
//! key has a default, so an empty file is a valid configuration. The
//! canonical rendering lists every key in sorted order and is what the
//! config hash covers.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::align::{AlignConfig, CorruptionConfig};
use crate::error::{Error, Result};
use crate::lift::LiftConfig;
use crate::pipeline::synth::SceneConfig;

/// Environment variable naming the external denoiser's exchange directory.
pub const DENOISER_DIR_ENV: &str = "PANODYN_DENOISER_DIR";
/// Environment variable naming the external depth estimator's exchange directory.
pub const DEPTH_DIR_ENV: &str = "PANODYN_DEPTH_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct AnimateSettings {
    /// `scene` (flow toward the synthetic scene's own video), `swirl`,
    /// `identity` or `external`.
    pub denoiser: String,
    /// `identity` or `pool`.
    pub codec: String,
    pub codec_factor: usize,
    pub steps: usize,
    /// Conditioning view resolution.
    pub res: usize,
    pub swirl_speed: f64,
    pub swirl_jitter: f64,
}

impl Default for AnimateSettings {
    fn default() -> Self {
        AnimateSettings {
            denoiser: "scene".into(),
            codec: "identity".into(),
            codec_factor: 4,
            steps: 25,
            res: 512,
            swirl_speed: 0.15,
            swirl_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSettings {
    /// `synthetic` or `external`.
    pub estimator: String,
    pub scale_min: f64,
    pub scale_max: f64,
    pub shift_fraction: f64,
    pub shift_variation: f64,
}

impl Default for DepthSettings {
    fn default() -> Self {
        let c = CorruptionConfig::default();
        DepthSettings {
            estimator: "synthetic".into(),
            scale_min: c.scale_min,
            scale_max: c.scale_max,
            shift_fraction: c.shift_fraction,
            shift_variation: c.variation,
        }
    }
}

impl DepthSettings {
    pub fn corruption(&self, seed: u64) -> CorruptionConfig {
        CorruptionConfig {
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            shift_fraction: self.shift_fraction,
            variation: self.shift_variation,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderCameraSettings {
    pub fov: f64,
    pub res: usize,
}

impl Default for RenderCameraSettings {
    fn default() -> Self {
        RenderCameraSettings { fov: 80.0, res: 128 }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    /// Training fan for alignment and lifting.
    pub fan_fov: f64,
    pub fan_res: usize,
    pub animate: AnimateSettings,
    pub depth: DepthSettings,
    pub align: AlignConfig,
    pub lift: LiftConfig,
    /// Feature extractor for the semantic term; only `pyramid` is built in.
    pub extractor: String,
    pub render: RenderCameraSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            scene: SceneConfig::default(),
            fan_fov: 80.0,
            fan_res: 128,
            animate: AnimateSettings::default(),
            depth: DepthSettings::default(),
            align: AlignConfig::default(),
            lift: LiftConfig::scaled(1000),
            extractor: "pyramid".into(),
            render: RenderCameraSettings::default(),
        }
    }
}

trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse_value(s: &str) -> Option<Self>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
        }
    )*};
}

from_str_value!(u64, usize, f64, String);

impl ConfigValue for [f64; 3] {
    fn render(&self) -> String {
        format!("{},{},{}", self[0], self[1], self[2])
    }

    fn parse_value(s: &str) -> Option<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<_>>()?;
        v.try_into().ok()
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every key with its current value, sorted by key.
        pub fn entries(&self) -> BTreeMap<&'static str, String> {
            let mut m = BTreeMap::new();
            $(m.insert($key, self.$($field).+.render());)*
            m
        }

        /// Sets one key from its textual value.
        pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
            match key {
                $($key => {
                    self.$($field).+ = ConfigValue::parse_value(value).ok_or_else(|| {
                        Error::Config(format!("invalid value {value:?} for {key}"))
                    })?;
                })*
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
            Ok(())
        }
    };
}

impl PipelineConfig {
    config_keys! {
        "seed" => seed;
        "scene.width" => scene.width;
        "scene.height" => scene.height;
        "scene.frames" => scene.frames;
        "scene.room_radius" => scene.room_radius;
        "scene.room_center" => scene.room_center;
        "scene.blob_radius" => scene.blob_radius;
        "scene.blob_center" => scene.blob_center;
        "scene.blob_travel" => scene.blob_travel;
        "scene.texture_freq" => scene.texture_freq;
        "scene.supersample" => scene.supersample;
        "scene.mask_margin_deg" => scene.mask_margin_deg;
        "fan.fov" => fan_fov;
        "fan.res" => fan_res;
        "animate.denoiser" => animate.denoiser;
        "animate.codec" => animate.codec;
        "animate.codec_factor" => animate.codec_factor;
        "animate.steps" => animate.steps;
        "animate.res" => animate.res;
        "animate.swirl_speed" => animate.swirl_speed;
        "animate.swirl_jitter" => animate.swirl_jitter;
        "depth.estimator" => depth.estimator;
        "depth.scale_min" => depth.scale_min;
        "depth.scale_max" => depth.scale_max;
        "depth.shift_fraction" => depth.shift_fraction;
        "depth.shift_variation" => depth.shift_variation;
        "align.lambda_depth" => align.lambda_depth;
        "align.lambda_scale" => align.lambda_scale;
        "align.lambda_shift" => align.lambda_shift;
        "align.iters" => align.iters;
        "align.warmup" => align.warmup;
        "align.lr" => align.lr;
        "align.lr_final" => align.lr_final;
        "align.shift_lr_scale" => align.shift_lr_scale;
        "align.far_factor" => align.far_factor;
        "align.grid_downsample" => align.grid_downsample;
        "align.beta_downsample" => align.beta_downsample;
        "align.divergence_window" => align.divergence_window;
        "lift.lambda_rgb" => lift.lambda_rgb;
        "lift.lambda_temporal" => lift.lambda_temporal;
        "lift.lambda_sem" => lift.lambda_sem;
        "lift.lambda_geo" => lift.lambda_geo;
        "lift.ssim_mix" => lift.ssim_mix;
        "lift.iters" => lift.iters_per_timestamp;
        "lift.stage2_start" => lift.stage2_start;
        "lift.lr_position" => lift.lr_position;
        "lift.lr_position_final" => lift.lr_position_final;
        "lift.lr_rotation" => lift.lr_rotation;
        "lift.lr_scale" => lift.lr_scale;
        "lift.lr_color" => lift.lr_color;
        "lift.lr_opacity" => lift.lr_opacity;
        "lift.lr_final_factor" => lift.lr_final_factor;
        "lift.per_face" => lift.per_face;
        "lift.extractor" => extractor;
        "render.fov" => render.fov;
        "render.res" => render.res;
    }

    /// Parses `key = value` lines on top of the defaults.
    ///
    /// Setting `lift.iters` without `lift.stage2_start` rescales the stage
    /// boundary and disturbance steps to the new budget. The disturbance
    /// schedule itself is `lift.alpha_schedule = it:α,it:α,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        if let Some(iters) = seen.get("lift.iters") {
            let iters: usize = iters
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {iters:?} for lift.iters")))?;
            let scaled = LiftConfig::scaled(iters);
            cfg.lift.stage2_start = scaled.stage2_start;
            cfg.lift.alpha_schedule = scaled.alpha_schedule;
        }
        for (key, value) in &seen {
            if key == "lift.alpha_schedule" {
                cfg.lift.alpha_schedule = parse_schedule(value)?;
            } else {
                cfg.set(key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key in sorted order, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let mut entries = self.entries();
        let schedule = self
            .lift
            .alpha_schedule
            .iter()
            .map(|(it, a)| format!("{it}:{a}"))
            .collect::<Vec<_>>()
            .join(",");
        let mut lines: Vec<(String, String)> = entries
            .iter_mut()
            .map(|(k, v)| (k.to_string(), std::mem::take(v)))
            .collect();
        lines.push(("lift.alpha_schedule".into(), schedule));
        lines.sort();
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// SHA-256 of [`canonical`](Self::canonical), lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        if s.width == 0 || s.width != 2 * s.height || s.frames == 0 || s.supersample == 0 {
            return Err(Error::Config(
                "scene needs a 2:1 panorama, at least one frame and supersample ≥ 1".into(),
            ));
        }
        if !(self.fan_fov > 0.0 && self.fan_fov < 180.0) || self.fan_res == 0 {
            return Err(Error::Config("fan.fov must lie in (0, 180) and fan.res be positive".into()));
        }
        if !(self.render.fov > 0.0 && self.render.fov < 180.0) || self.render.res == 0 {
            return Err(Error::Config("render.fov must lie in (0, 180) and render.res be positive".into()));
        }
        let a = &self.animate;
        if !["scene", "swirl", "identity", "external"].contains(&a.denoiser.as_str()) {
            return Err(Error::Config(format!("unknown denoiser {:?}", a.denoiser)));
        }
        if !["identity", "pool"].contains(&a.codec.as_str()) {
            return Err(Error::Config(format!("unknown codec {:?}", a.codec)));
        }
        if a.steps == 0 || a.res == 0 || a.codec_factor == 0 {
            return Err(Error::Config("animate steps, res and codec_factor must be positive".into()));
        }
        if !["synthetic", "external"].contains(&self.depth.estimator.as_str()) {
            return Err(Error::Config(format!("unknown depth estimator {:?}", self.depth.estimator)));
        }
        let d = &self.depth;
        if !(d.scale_min > 0.0 && d.scale_min <= d.scale_max)
            || !(d.shift_fraction >= 0.0)
            || !(0.0..=1.0).contains(&d.shift_variation)
        {
            return Err(Error::Config("invalid depth corruption settings".into()));
        }
        if self.extractor != "pyramid" {
            return Err(Error::Config(format!(
                "unknown feature extractor {:?}; only pyramid is available",
                self.extractor
            )));
        }
        self.align.validate().map_err(as_config)?;
        self.lift.validate().map_err(as_config)?;
        Ok(())
    }

    /// Seed for one module, derived from the global seed and the module name.
    pub fn module_seed(&self, module: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(module.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            seed: self.module_seed("scene"),
            ..self.scene.clone()
        }
    }

    pub fn lift_config(&self) -> LiftConfig {
        LiftConfig {
            seed: self.module_seed("lift"),
            ..self.lift.clone()
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(m) | Error::InvalidInput(m) => Error::Config(m),
        other => other,
    }
}

fn parse_schedule(value: &str) -> Result<Vec<(usize, f64)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|step| {
            let (it, a) = step.trim().split_once(':')?;
            Some((it.trim().parse().ok()?, a.trim().parse().ok()?))
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config(format!("invalid lift.alpha_schedule {value:?}")))
}
