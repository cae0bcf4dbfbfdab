use std::sync::Arc;

use rayon::prelude::*;

use super::codec::Codec;
use super::denoiser::{DenoiseRequest, Denoiser};
use super::latent::{init_latent, FusionPlan, ProjectionPlan, SphericalLatentField};
use crate::error::{Error, Result};
use crate::geom::{icosphere_samples, Camera, SphereIndex};
use crate::image::{project_perspective, splat_back, EquirectImage, Image, PanoVideo};

/// Binary single-channel region mask on the panorama; 1 marks texels that may move.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimRegionMask(Image);

impl AnimRegionMask {
    pub fn new(mask: Image) -> Result<Self> {
        if mask.channels() != 1 {
            return Err(Error::InvalidInput(format!(
                "mask must have 1 channel, got {}",
                mask.channels()
            )));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("mask values must be 0 or 1".into()));
        }
        Ok(AnimRegionMask(mask))
    }

    /// A mask with every texel set to `value`.
    pub fn uniform(width: usize, height: usize, value: bool) -> Self {
        AnimRegionMask(Image::filled(width, height, 1, value as u8 as f32))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn is_set(&self, col: usize, row: usize) -> bool {
        self.0.get(col, row, 0) != 0.0
    }

    /// Perspective mask seen by `cam`, re-binarized at 0.5.
    pub fn project(&self, cam: &Camera) -> Image {
        let mut m = project_perspective(&self.0, cam);
        for v in m.data_mut() {
            *v = if *v >= 0.5 { 1.0 } else { 0.0 };
        }
        m
    }
}

/// Number of denoising steps; noise schedules live inside the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiseSchedule {
    pub total_steps: usize,
}

impl Default for DenoiseSchedule {
    fn default() -> Self {
        DenoiseSchedule { total_steps: 25 }
    }
}

impl DenoiseSchedule {
    pub fn validate(&self, denoiser: &dyn Denoiser) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::InvalidInput("schedule needs T ≥ 1".into()));
        }
        match denoiser.expected_steps() {
            Some(n) if n != self.total_steps => Err(Error::InvalidInput(format!(
                "schedule has {} steps, denoiser expects {n}",
                self.total_steps
            ))),
            _ => Ok(()),
        }
    }
}

/// Sphere points per icosahedron face for a perspective latent grid of
/// `p_h × p_w` cells: about 1.5× the fan's total cell count, rounded to a
/// square so every face gets a full triangular lattice.
pub fn sphere_density(p_h: usize, p_w: usize) -> usize {
    let n = (1.5 * (p_h * p_w) as f64).sqrt().round().max(1.0) as usize;
    n * n
}

/// Precomputed state for running fuse steps over one panorama and camera fan.
pub struct PanoramicDenoiser<'a> {
    codec: &'a dyn Codec,
    frames: usize,
    seed: u64,
    cond_cams: Vec<Camera>,
    conditions: Vec<Image>,
    masks: Vec<Image>,
    projections: Vec<ProjectionPlan>,
    fusion: FusionPlan,
    sampling: Arc<crate::geom::SphereSampling>,
}

impl<'a> PanoramicDenoiser<'a> {
    /// `cams` carry the conditioning resolution; latent grids are that
    /// resolution divided by the codec's downsample factor.
    pub fn new(
        pano: &EquirectImage,
        mask: &AnimRegionMask,
        codec: &'a dyn Codec,
        cams: &[Camera],
        frames: usize,
        seed: u64,
    ) -> Result<Self> {
        pano.ensure_panorama()?;
        pano.ensure_finite()?;
        let m = mask.image();
        if m.width() != pano.width() || m.height() != pano.height() {
            return Err(Error::DimensionMismatch(format!(
                "mask {}×{} does not match panorama {}×{}",
                m.width(),
                m.height(),
                pano.width(),
                pano.height()
            )));
        }
        if cams.is_empty() || frames == 0 {
            return Err(Error::InvalidInput("need at least one camera and one frame".into()));
        }
        let d = codec.downsample();
        let latent_cams = cams
            .iter()
            .map(|c| {
                if c.res_w() % d != 0 || c.res_h() % d != 0 {
                    return Err(Error::DimensionMismatch(format!(
                        "view {}×{} not divisible by codec factor {d}",
                        c.res_w(),
                        c.res_h()
                    )));
                }
                Ok(c.with_resolution(c.res_w() / d, c.res_h() / d))
            })
            .collect::<Result<Vec<_>>>()?;
        let (p_w, p_h) = (latent_cams[0].res_w(), latent_cams[0].res_h());
        let sampling = Arc::new(icosphere_samples(sphere_density(p_h, p_w))?);
        log::debug!("spherical latent field with {} points", sampling.len());
        let index = SphereIndex::new(&sampling);
        let projections = latent_cams
            .iter()
            .map(|c| ProjectionPlan::new(&index, c))
            .collect::<Result<Vec<_>>>()?;
        let fusion = FusionPlan::new(&sampling, &latent_cams)?;
        let conditions = cams.iter().map(|c| project_perspective(pano, c)).collect();
        let masks = cams.iter().map(|c| mask.project(c)).collect();
        Ok(PanoramicDenoiser {
            codec,
            frames,
            seed,
            cond_cams: cams.to_vec(),
            conditions,
            masks,
            projections,
            fusion,
            sampling,
        })
    }

    pub fn sampling(&self) -> &Arc<crate::geom::SphereSampling> {
        &self.sampling
    }

    pub fn conditions(&self) -> &[Image] {
        &self.conditions
    }

    pub fn masks(&self) -> &[Image] {
        &self.masks
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cond_cams
    }

    pub fn projections(&self) -> &[ProjectionPlan] {
        &self.projections
    }

    pub fn fusion(&self) -> &FusionPlan {
        &self.fusion
    }

    /// Initial noise field `S^T`.
    pub fn init(&self, total_steps: usize) -> Result<SphericalLatentField> {
        init_latent(
            self.sampling.clone(),
            self.frames,
            self.codec.latent_channels(),
            total_steps,
            self.seed,
        )
    }

    fn request<'b>(
        &'b self,
        view: usize,
        latent: &'b Image,
        step: usize,
        total_steps: usize,
    ) -> DenoiseRequest<'b> {
        DenoiseRequest {
            latent,
            condition: &self.conditions[view],
            mask: &self.masks[view],
            step,
            total_steps,
            view,
            camera: &self.cond_cams[view],
            frames: self.frames,
            channels: self.codec.latent_channels(),
            codec: self.codec,
            seed: self.seed,
        }
    }

    /// Runs the denoiser on every view's projection of `field`.
    pub fn denoise_views(
        &self,
        field: &SphericalLatentField,
        denoiser: &dyn Denoiser,
        total_steps: usize,
    ) -> Result<Vec<Image>> {
        let t = field.step();
        let run = |view: usize| -> Result<Image> {
            let z = self.projections[view].project(field);
            let out = denoiser.step(&self.request(view, &z, t, total_steps))?;
            if out.dims() != z.dims() {
                return Err(Error::Denoiser(format!(
                    "view {view}: output shape {:?} differs from input {:?}",
                    out.dims(),
                    z.dims()
                )));
            }
            Ok(out)
        };
        let n = self.projections.len();
        if denoiser.concurrent() {
            (0..n).into_par_iter().map(run).collect()
        } else {
            (0..n).map(run).collect()
        }
    }

    /// One step of `S^t → S^{t−1}`: project, denoise per view, average per point.
    pub fn fuse_step(
        &self,
        field: &SphericalLatentField,
        denoiser: &dyn Denoiser,
        total_steps: usize,
    ) -> Result<SphericalLatentField> {
        let t = field.step();
        if t == 0 {
            return Err(Error::InvalidInput("latent field is already at step 0".into()));
        }
        let views = self.denoise_views(field, denoiser, total_steps)?;
        let values = self.fusion.fuse(&views, field.dim())?;
        Ok(field.with_values(values, t - 1))
    }

    /// Resamples a field onto an equirect latent grid via the view projections.
    pub fn to_equirect(
        &self,
        field: &SphericalLatentField,
        width: usize,
        height: usize,
    ) -> Result<Image> {
        let grids: Vec<Image> = self.projections.iter().map(|p| p.project(field)).collect();
        let views: Vec<(&Image, &Camera)> = grids
            .iter()
            .zip(&self.projections)
            .map(|(g, p)| (g, p.camera()))
            .collect();
        let sb = splat_back(&views, width, height)?;
        if sb.uncovered() > 0 {
            return Err(Error::Coverage(format!(
                "{} equirect latent texels not covered by the fan",
                sb.uncovered()
            )));
        }
        Ok(sb.image)
    }
}

/// Convenience single step that builds the projection state from scratch.
#[allow(clippy::too_many_arguments)]
pub fn fuse_step(
    field: &SphericalLatentField,
    pano: &EquirectImage,
    mask: &AnimRegionMask,
    denoiser: &dyn Denoiser,
    codec: &dyn Codec,
    cams: &[Camera],
    total_steps: usize,
    seed: u64,
) -> Result<SphericalLatentField> {
    let pd = PanoramicDenoiser::new(pano, mask, codec, cams, field.frames(), seed)?;
    if pd.sampling().len() != field.sampling().len() {
        return Err(Error::DimensionMismatch(
            "field sampling does not match the fan's latent density".into(),
        ));
    }
    pd.fuse_step(field, denoiser, total_steps)
}

/// Options for [`animate`] beyond the core inputs.
#[derive(Debug, Clone, Copy)]
pub struct AnimateOptions {
    pub frames: usize,
    pub seed: u64,
}

fn gate(decoded: &Image, still: &Image, mask: &Image) -> Image {
    let c = decoded.channels();
    let mut out = still.clone();
    for (i, px) in out.data_mut().chunks_exact_mut(c).enumerate() {
        if mask.data()[i] != 0.0 {
            px.copy_from_slice(&decoded.data()[i * c..(i + 1) * c]);
        }
    }
    out
}

/// Full animation loop: `S^T` noise, `T` fuse steps, equirect decode of `S^0`.
///
/// Texels outside the mask take the codec round trip of the input in every
/// frame.
pub fn animate(
    pano: &EquirectImage,
    mask: &AnimRegionMask,
    denoiser: &dyn Denoiser,
    codec: &dyn Codec,
    schedule: DenoiseSchedule,
    cams: &[Camera],
    options: AnimateOptions,
) -> Result<PanoVideo> {
    schedule.validate(denoiser)?;
    let pd = PanoramicDenoiser::new(pano, mask, codec, cams, options.frames, options.seed)?;
    let mut field = pd.init(schedule.total_steps)?;
    while field.step() > 0 {
        log::debug!("fuse step {}", field.step());
        field = pd.fuse_step(&field, denoiser, schedule.total_steps)?;
    }
    let d = codec.downsample();
    let (w, h) = (pano.width(), pano.height());
    if w % d != 0 || h % d != 0 {
        return Err(Error::DimensionMismatch(format!(
            "panorama {w}×{h} not divisible by codec factor {d}"
        )));
    }
    let grid = pd.to_equirect(&field, w / d, h / d)?;
    let still = codec.decode_frame(&codec.encode(pano)?)?;
    let frames = (0..options.frames)
        .map(|k| {
            let decoded = codec.decode(&grid, k)?;
            decoded.same_dims(&still)?;
            Ok(gate(&decoded, &still, mask.image()))
        })
        .collect::<Result<Vec<_>>>()?;
    PanoVideo::new(frames)
}

/// Baseline that denoises every view on its own, without fusion.
///
/// Returns `[view][frame]` perspective videos at conditioning resolution,
/// gated by the perspective masks like [`animate`].
pub fn animate_independent(
    pano: &EquirectImage,
    mask: &AnimRegionMask,
    denoiser: &dyn Denoiser,
    codec: &dyn Codec,
    schedule: DenoiseSchedule,
    cams: &[Camera],
    options: AnimateOptions,
) -> Result<Vec<Vec<Image>>> {
    schedule.validate(denoiser)?;
    let pd = PanoramicDenoiser::new(pano, mask, codec, cams, options.frames, options.seed)?;
    let init = pd.init(schedule.total_steps)?;
    let run = |view: usize| -> Result<Vec<Image>> {
        let mut z = pd.projections[view].project(&init);
        for t in (1..=schedule.total_steps).rev() {
            let next = denoiser.step(&pd.request(view, &z, t, schedule.total_steps))?;
            next.same_dims(&z)?;
            z = next;
        }
        let still = codec.decode_frame(&codec.encode(&pd.conditions[view])?)?;
        (0..options.frames)
            .map(|k| Ok(gate(&codec.decode(&z, k)?, &still, &pd.masks[view])))
            .collect()
    };
    let n = cams.len();
    if denoiser.concurrent() {
        (0..n).into_par_iter().map(run).collect()
    } else {
        (0..n).map(run).collect()
    }
}
