use rayon::prelude::*;

use super::depth::{rescale_depth, DepthRequest, MonoDepth};
use super::loss::{objective, AlignProblem, AlignmentState, LossTerms, LossWeights};
use crate::error::{Error, Result};
use crate::geom::Camera;
use crate::image::{project_perspective, splat_back, Image, PanoVideo};
use crate::optim::{exp_decay, Adam};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub lambda_depth: f64,
    pub lambda_scale: f64,
    pub lambda_shift: f64,
    pub iters: usize,
    /// Iterations with the scale and shift weights forced to zero.
    pub warmup: usize,
    /// Initial and final step sizes; depth and shift steps are multiplied by
    /// the median initial depth.
    pub lr: f64,
    pub lr_final: f64,
    /// Relative step size of the per-pixel shifts.
    pub shift_lr_scale: f64,
    /// Depth cap as a multiple of the median initial depth.
    pub far_factor: f64,
    /// Depth grid size is the panorama size divided by this.
    pub grid_downsample: usize,
    /// Shift grids are each view's resolution divided by this.
    pub beta_downsample: usize,
    /// Abort after this many consecutive loss increases.
    pub divergence_window: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            lambda_depth: 1.0,
            lambda_scale: 0.1,
            lambda_shift: 0.01,
            iters: 3000,
            warmup: 1500,
            lr: 0.01,
            lr_final: 1e-4,
            shift_lr_scale: 1.0,
            far_factor: 100.0,
            grid_downsample: 4,
            beta_downsample: 1,
            divergence_window: 100,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda_depth, self.lambda_scale, self.lambda_shift]
            .iter()
            .all(|&l| l >= 0.0 && l.is_finite())
            && self.warmup <= self.iters
            && self.lr > 0.0
            && self.lr_final > 0.0
            && self.shift_lr_scale >= 0.0
            && self.far_factor > 1.0
            && self.grid_downsample >= 1
            && self.beta_downsample >= 1
            && self.divergence_window >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid alignment config {self:?}")))
        }
    }

    fn weights(&self, it: usize) -> LossWeights {
        let on = it >= self.warmup;
        LossWeights {
            depth: self.lambda_depth,
            scale: if on { self.lambda_scale } else { 0.0 },
            shift: if on { self.lambda_shift } else { 0.0 },
        }
    }

    fn full_weights(&self) -> LossWeights {
        LossWeights {
            depth: self.lambda_depth,
            scale: self.lambda_scale,
            shift: self.lambda_shift,
        }
    }
}

/// Output of [`align`].
#[derive(Debug, Clone)]
pub struct AlignResult {
    /// One ray-distance depth panorama per frame, at the depth-grid resolution.
    pub depths: Vec<Image>,
    pub state: AlignmentState,
    /// Full objective (all weights on) before and after optimization.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_terms: LossTerms,
    /// Optimized objective, sampled every 10 iterations.
    pub trace: Vec<f64>,
    pub far_depth: f64,
}

/// Runs `Θ` on every view of every frame and converts to ray distance.
pub fn estimate_views(
    video: &PanoVideo,
    cams: &[Camera],
    estimator: &dyn MonoDepth,
) -> Result<Vec<Vec<Image>>> {
    let one = |k: usize, i: usize| -> Result<Image> {
        let cam = &cams[i];
        let img = project_perspective(video.frame(k), cam);
        let z = estimator.estimate(&DepthRequest {
            image: &img,
            view: i,
            frame: k,
            camera: cam,
        })?;
        if z.dims() != (cam.res_w(), cam.res_h(), 1) {
            return Err(Error::DepthEstimator(format!(
                "view {i} frame {k}: estimate has shape {:?}",
                z.dims()
            )));
        }
        rescale_depth(&z, cam)
    };
    let n = cams.len();
    let flat: Vec<Image> = if estimator.concurrent() {
        (0..video.len() * n)
            .into_par_iter()
            .map(|idx| one(idx / n, idx % n))
            .collect::<Result<_>>()?
    } else {
        (0..video.len() * n)
            .map(|idx| one(idx / n, idx % n))
            .collect::<Result<_>>()?
    };
    let mut frames = Vec::with_capacity(video.len());
    let mut it = flat.into_iter();
    for _ in 0..video.len() {
        frames.push(it.by_ref().take(n).collect());
    }
    Ok(frames)
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Initial state: each frame's field is `softplus(0)` times the merged
/// estimates; scales and shifts start at zero.
pub fn initial_state(problem: &AlignProblem, theta: &[Vec<Image>]) -> Result<AlignmentState> {
    let (gw, gh) = problem.grid_dims();
    let mut state = AlignmentState::zeros(problem);
    for (k, frame) in theta.iter().enumerate() {
        let views: Vec<(&Image, &Camera)> = frame.iter().zip(problem.cameras()).collect();
        let merged = splat_back(&views, gw, gh)?;
        if merged.uncovered() > 0 {
            return Err(Error::Coverage(format!(
                "{} depth texels not covered by any view",
                merged.uncovered()
            )));
        }
        state.depth[k] = merged
            .image
            .data()
            .iter()
            .map(|&v| std::f64::consts::LN_2 * v as f64)
            .collect();
    }
    Ok(state)
}

/// Optimizes the alignment objective jointly over all frames.
pub fn optimize(
    problem: &AlignProblem,
    mut state: AlignmentState,
    config: &AlignConfig,
) -> Result<AlignResult> {
    config.validate()?;
    let scale = median(state.depth.iter().flatten().copied());
    if !(scale > 0.0) {
        return Err(Error::InvalidInput("initial depth median is not positive".into()));
    }
    let floor = 1e-3 * scale;
    let far = config.far_factor * scale;
    let n_depth: usize = state.depth.iter().map(Vec::len).sum();
    let n_alpha: usize = state.alpha.iter().map(Vec::len).sum();
    let n_beta: usize = state.beta.iter().flatten().map(Vec::len).sum();
    let mut adam_d = Adam::new(n_depth);
    let mut adam_a = Adam::new(n_alpha);
    let mut adam_b = Adam::new(n_beta);
    let (initial_terms, _) = objective(problem, &state, &config.full_weights());
    let initial_loss = initial_terms.weighted(&config.full_weights());
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    let mut rising = 0usize;
    let (mut pd, mut pa, mut pb) = (
        Vec::with_capacity(n_depth),
        Vec::with_capacity(n_alpha),
        Vec::with_capacity(n_beta),
    );
    for it in 0..config.iters {
        let w = config.weights(it);
        let (terms, grad) = objective(problem, &state, &w);
        let loss = terms.weighted(&w);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss at iteration {it}")));
        }
        if it % 10 == 0 {
            trace.push(loss);
        }
        rising = if loss > prev { rising + 1 } else { 0 };
        if rising >= config.divergence_window {
            return Err(Error::Divergence(format!(
                "alignment loss rose for {rising} consecutive iterations (iteration {it}, loss {loss:.6e}, depth {:.3e}, scale {:.3e}, shift {:.3e})",
                terms.depth, terms.scale, terms.shift
            )));
        }
        prev = loss;

        let lr = exp_decay(config.lr, config.lr_final, it, config.iters);
        pd.clear();
        pd.extend(state.depth.iter().flatten());
        pa.clear();
        pa.extend(state.alpha.iter().flatten());
        pb.clear();
        pb.extend(state.beta.iter().flatten().flatten());
        let gd: Vec<f64> = grad.depth.iter().flatten().copied().collect();
        let ga: Vec<f64> = grad.alpha.iter().flatten().copied().collect();
        let gb: Vec<f64> = grad.beta.iter().flatten().flatten().copied().collect();
        adam_d.step(&mut pd, &gd, lr * scale);
        adam_a.step(&mut pa, &ga, lr);
        adam_b.step(&mut pb, &gb, lr * scale * config.shift_lr_scale);
        let mut d_it = pd.iter();
        for v in state.depth.iter_mut().flatten() {
            *v = d_it.next().expect("same length").max(floor);
        }
        let mut a_it = pa.iter();
        for v in state.alpha.iter_mut().flatten() {
            *v = *a_it.next().expect("same length");
        }
        let mut b_it = pb.iter();
        for v in state.beta.iter_mut().flatten().flatten() {
            *v = *b_it.next().expect("same length");
        }
    }
    for v in state.depth.iter_mut().flatten() {
        *v = v.clamp(floor, far);
    }
    let (final_terms, _) = objective(problem, &state, &config.full_weights());
    let final_loss = final_terms.weighted(&config.full_weights());
    let (gw, gh) = problem.grid_dims();
    let depths = state
        .depth
        .iter()
        .map(|d| Image::from_data(gw, gh, 1, d.iter().map(|&v| v as f32).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignResult {
        depths,
        state,
        initial_loss,
        final_loss,
        final_terms,
        trace,
        far_depth: far,
    })
}

/// Fuses per-view monocular depth of every frame into panoramic depth maps.
pub fn align(
    video: &PanoVideo,
    cams: &[Camera],
    estimator: &dyn MonoDepth,
    config: &AlignConfig,
) -> Result<AlignResult> {
    config.validate()?;
    if video.is_empty() {
        return Err(Error::InvalidInput("empty video".into()));
    }
    let f0 = video.frame(0);
    let d = config.grid_downsample;
    if !f0.width().is_multiple_of(d) || !f0.height().is_multiple_of(d) {
        return Err(Error::DimensionMismatch(format!(
            "panorama {}×{} not divisible by grid factor {d}",
            f0.width(),
            f0.height()
        )));
    }
    let theta = estimate_views(video, cams, estimator)?;
    let problem = AlignProblem::new(
        cams,
        &theta,
        f0.width() / d,
        f0.height() / d,
        config.beta_downsample,
    )?;
    let state = initial_state(&problem, &theta)?;
    optimize(&problem, state, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::camera_fan;
    use crate::image::project_perspective;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_problem(frames: usize, res: usize, bds: usize) -> (AlignProblem, Vec<Vec<Image>>) {
        let cams = camera_fan(80.0, res).unwrap();
        let theta: Vec<Vec<Image>> = (0..frames)
            .map(|k| {
                cams.iter()
                    .enumerate()
                    .map(|(i, _)| {
                        Image::from_fn(res, res, 1, |c, r, px| {
                            px[0] = 2.0 + 0.1 * k as f32 + 0.05 * ((c * 3 + r * 5 + i) % 7) as f32
                        })
                    })
                    .collect()
            })
            .collect();
        let prob = AlignProblem::new(&cams, &theta, 16, 8, bds).unwrap();
        (prob, theta)
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (prob, theta) = toy_problem(2, 8, 2);
        let mut state = initial_state(&prob, &theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        state.for_each_mut(|v| *v += rng.gen_range(-0.3..0.3));
        let w = LossWeights {
            depth: 1.0,
            scale: 0.1,
            shift: 0.01,
        };
        let (_, grad) = objective(&prob, &state, &w);
        let mut flat_grad = Vec::new();
        grad.clone().for_each_mut(|v| flat_grad.push(*v));
        let n = state.len();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for idx in (0..n).step_by(n / 60 + 1).chain([n - 1]) {
            let eval = |delta: f64| {
                let mut s = state.clone();
                let mut j = 0;
                s.for_each_mut(|v| {
                    if j == idx {
                        *v += delta;
                    }
                    j += 1;
                });
                objective(&prob, &s, &w).0.weighted(&w)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - flat_grad[idx]).abs() / fd.abs().max(flat_grad[idx].abs()).max(1e-3);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn static_video_keeps_frames_identical() {
        let (prob, theta) = {
            let (p, t) = toy_problem(1, 8, 4);
            let t2 = vec![t[0].clone(), t[0].clone()];
            (AlignProblem::new(p.cameras(), &t2, 16, 8, 4).unwrap(), t2)
        };
        let state = initial_state(&prob, &theta).unwrap();
        let cfg = AlignConfig {
            iters: 200,
            warmup: 100,
            ..Default::default()
        };
        let res = optimize(&prob, state, &cfg).unwrap();
        for (a, b) in res.state.alpha[0].iter().zip(&res.state.alpha[1]) {
            assert!((a - b).abs() < 1e-5);
        }
        for (a, b) in res.depths[0].data().iter().zip(res.depths[1].data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(res.state.beta[0], res.state.beta[1]);
    }

    /// Views of a smooth field, each corrupted by its own scale and offset.
    fn affine_views(frames: usize) -> (AlignProblem, Vec<Vec<Image>>) {
        let cams = camera_fan(80.0, 8).unwrap();
        let theta: Vec<Vec<Image>> = (0..frames)
            .map(|k| {
                let field = Image::from_fn(16, 8, 1, |c, r, px| {
                    let u = c as f32 / 16.0 * std::f32::consts::TAU;
                    px[0] = 3.0 + 0.5 * (u + 0.2 * k as f32).sin() + 0.1 * r as f32
                });
                cams.iter()
                    .enumerate()
                    .map(|(i, cam)| {
                        let mut p = project_perspective(&field, cam);
                        let (s, b) = (0.7 + 0.035 * i as f32, 0.1 * (i % 3) as f32);
                        p.data_mut().iter_mut().for_each(|v| *v = s * *v + b);
                        p
                    })
                    .collect()
            })
            .collect();
        let prob = AlignProblem::new(&cams, &theta, 16, 8, 2).unwrap();
        (prob, theta)
    }

    /// Largest deviation from the mean, relative to the mean.
    fn spread(d: &[f32]) -> f32 {
        let mean = d.iter().sum::<f32>() / d.len() as f32;
        d.iter().fold(0.0f32, |m, v| m.max((v - mean).abs())) / mean
    }

    #[test]
    fn identical_views_keep_the_merged_field() {
        let cams = camera_fan(80.0, 8).unwrap();
        let theta = vec![cams
            .iter()
            .map(|_| Image::from_fn(8, 8, 1, |_, _, px| px[0] = 3.0))
            .collect::<Vec<_>>()];
        let prob = AlignProblem::new(&cams, &theta, 16, 8, 1).unwrap();
        let views: Vec<(&Image, &Camera)> = theta[0].iter().zip(&cams).collect();
        let merged = splat_back(&views, 16, 8).unwrap();
        assert!(merged.image.data().iter().all(|v| (v - 3.0).abs() < 1e-6));

        // The scale regularizer pulls softplus(α) toward 1 and a shift common
        // to all views is free, so the field is the merge up to an affine map.
        let init = initial_state(&prob, &theta).unwrap();
        let res = optimize(&prob, init, &AlignConfig::default()).unwrap();
        assert!(res.final_terms.depth < 1e-8, "{:?}", res.final_terms);
        let s = spread(res.depths[0].data());
        assert!(s < 1e-4, "relative spread {s}");
    }

    #[test]
    fn optimization_lowers_the_objective() {
        let (prob, theta) = affine_views(2);
        let state = initial_state(&prob, &theta).unwrap();
        let res = optimize(&prob, state, &AlignConfig::default()).unwrap();
        assert!(
            res.final_loss < res.initial_loss,
            "{} -> {} {:?}",
            res.initial_loss,
            res.final_loss,
            res.final_terms
        );
        assert!(res.depths.iter().all(|d| d.data().iter().all(|&v| v > 0.0)));
    }

    #[test]
    fn overflowing_state_is_reported_as_divergence() {
        let (prob, theta) = toy_problem(1, 8, 2);
        let mut state = initial_state(&prob, &theta).unwrap();
        state.alpha[0][3] = 1e300;
        let err = optimize(&prob, state, &AlignConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(AlignConfig::default().validate().is_ok());
        let bad = AlignConfig {
            warmup: 5000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AlignConfig {
            beta_downsample: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
