//! Per-frame Gaussian optimization against a panoramic video.

mod loss;
mod train;

pub use loss::{
    loss_geo, loss_rgb, loss_sem, loss_temporal, FeatureExtractor, LossGrad, PyramidFeatures,
    PEARSON_EPS,
};
pub use train::{
    checkpoint_name, lift, lift_with, read_checkpoints, training_psnr, write_checkpoints,
    write_manifest, LiftConfig, LiftResult, LiftTerms, Manifest, TRACE_EVERY,
};
