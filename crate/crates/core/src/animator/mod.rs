//! Panoramic animation: a latent field on the sphere is projected into a fan of
//! perspective views, denoised per view and fused back by per-point averaging.

mod codec;
mod denoiser;
mod fuse;
mod latent;

pub use codec::{Codec, IdentityCodec, PoolCodec};
pub use denoiser::{
    advect_panorama, blend_toward, stack_frames, swirl_image, DenoiseRequest, Denoiser,
    ExternalProcessDenoiser, FlowFieldDenoiser, FlowTarget, IdentityDenoiser,
};
pub use fuse::{
    animate, animate_independent, fuse_step, sphere_density, AnimRegionMask, AnimateOptions,
    DenoiseSchedule, PanoramicDenoiser,
};
pub use latent::{
    init_latent, project_latent, FusionPlan, ProjectionPlan, SphericalLatentField,
    LATENT_NEIGHBORS,
};
