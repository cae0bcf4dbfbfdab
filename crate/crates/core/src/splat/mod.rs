//! Per-timestamp 3D Gaussians and a differentiable tile rasterizer.

mod gaussians;
mod init;
mod raster;

pub use gaussians::{
    logit, normalize_quat, rotation_matrix, sigmoid, Gaussian, GaussianSet, PLY_PROPERTIES,
};
pub use init::{unproject_init, unproject_with_scale, INIT_OPACITY, INIT_SCALE};
pub use raster::{
    rasterize, rasterize_backward, GaussianGrads, RasterState, Render, RenderSettings, CUTOFF_SIGMA,
    GUARD_BAND, LOW_PASS, TILE,
};
