//! Configuration, file formats, synthetic scenes and end-to-end orchestration.

pub mod config;
pub mod handshake;
pub mod run;
pub mod synth;
pub mod tensor;

pub use config::PipelineConfig;
pub use run::{
    run_align, run_animate, run_eval, run_lift, run_render, run_synth, OutputLock, RenderCamera,
};
