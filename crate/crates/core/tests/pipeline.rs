use panodyn::lift::read_checkpoints;
use panodyn::pipeline::run::{read_depths, read_frames};
use panodyn::pipeline::{
    run_align, run_animate, run_lift, run_render, run_synth, OutputLock, PipelineConfig,
    RenderCamera,
};
use panodyn::Error;

fn tiny() -> PipelineConfig {
    PipelineConfig::parse(
        "scene.width = 64\nscene.height = 32\nscene.frames = 3\nscene.supersample = 1\n\
         animate.res = 24\nanimate.steps = 3\nfan.res = 24\nalign.iters = 40\nalign.warmup = 20\n\
         lift.iters = 20\nlift.per_face = 12\nrender.res = 16\n",
    )
    .unwrap()
}

#[test]
fn stages_chain_through_the_filesystem() {
    let dir = tempfile::tempdir().unwrap();
    let (scene_dir, run_dir) = (dir.path().join("scene"), dir.path().join("run"));
    let cfg = tiny();
    run_synth(&cfg, &scene_dir).unwrap();
    let video = run_animate(&cfg, &scene_dir, &run_dir).unwrap();
    assert_eq!(video.len(), 3);
    assert_eq!(read_frames(&run_dir.join("frames")).unwrap().len(), 3);

    let depths = run_align(&cfg, &run_dir, &run_dir).unwrap();
    let stored = read_depths(&run_dir.join("depth"), 3).unwrap();
    assert_eq!(depths, stored);
    assert!(stored.iter().all(|d| d.data().iter().all(|&v| v > 0.0)));

    let psnr = run_lift(&cfg, &run_dir, &run_dir).unwrap();
    assert_eq!(psnr.len(), 3);
    let (sets, manifest) = read_checkpoints(&run_dir.join("gaussians")).unwrap();
    assert_eq!(sets.len(), 3);
    assert_eq!(manifest.config_hash, cfg.hash());
    assert_eq!(sets[0].len(), 20 * 12);

    let cam = RenderCamera::fan_view(&cfg, 3, [0.0, 0.02, 0.0]).unwrap();
    let frames = run_render(&cfg, &run_dir, &run_dir, &cam).unwrap();
    assert_eq!(frames.len(), 3);
    assert_eq!(frames[0].dims(), (16, 16, 3));
}

#[test]
fn missing_inputs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_lift(&tiny(), &dir.path().join("nothing"), &dir.path().join("out")).unwrap_err();
    assert!(err.is_input_error(), "{err}");
}

#[test]
fn held_lock_blocks_a_second_writer() {
    let dir = tempfile::tempdir().unwrap();
    let lock = OutputLock::acquire(dir.path()).unwrap();
    let err = run_synth(&tiny(), dir.path()).unwrap_err();
    assert!(matches!(err, Error::Locked(_)), "{err}");
    drop(lock);
    run_synth(&tiny(), dir.path()).unwrap();
}
