//! Fusion of per-view monocular depth into temporally consistent panoramic depth.

mod depth;
mod loss;
mod solve;

pub use depth::{
    rescale_depth, Corruption, CorruptionConfig, DepthRequest, ExternalDepth, MonoDepth,
    SyntheticDepth,
};
pub use loss::{
    align_losses, equirect_taps, objective, softplus, total_variation, AlignProblem,
    AlignmentState, LossTerms, LossWeights, TV_EPS,
};
pub use solve::{align, estimate_views, initial_state, optimize, AlignConfig, AlignResult};
