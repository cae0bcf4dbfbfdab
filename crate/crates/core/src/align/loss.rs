use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{camera_ray, dir_to_equirect, Camera};
use crate::image::Image;

/// Smoothing inside the square root of the total-variation term.
pub const TV_EPS: f64 = 1e-6;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Bilinear taps of one equirect read, matching `sample_equirect` exactly.
pub fn equirect_taps(width: usize, height: usize, u: f64, v: f64) -> [(u32, f64); 4] {
    let col = (u + 1.0) * 0.5 * width as f64 - 0.5;
    let row = ((1.0 - v) * 0.5 * height as f64 - 0.5).clamp(0.0, (height - 1) as f64);
    let c0f = col.floor();
    let fx = col - c0f;
    let c0 = (c0f as i64).rem_euclid(width as i64) as usize;
    let c1 = (c0 + 1) % width;
    let r0 = row.floor() as usize;
    let r1 = (r0 + 1).min(height - 1);
    let fy = row - r0 as f64;
    let idx = |c: usize, r: usize| (r * width + c) as u32;
    [
        (idx(c0, r0), (1.0 - fx) * (1.0 - fy)),
        (idx(c1, r0), fx * (1.0 - fy)),
        (idx(c0, r1), (1.0 - fx) * fy),
        (idx(c1, r1), fx * fy),
    ]
}

/// Bilinear upsampling taps from a `bw × bh` grid to a `w × h` grid with
/// aligned texel centers; reads past the border clamp to the edge.
pub fn upsample_taps(bw: usize, bh: usize, w: usize, h: usize) -> Vec<[(u32, f64); 4]> {
    let axis = |p: usize, n: usize, m: usize| -> (usize, usize, f64) {
        let x = ((p as f64 + 0.5) * m as f64 / n as f64 - 0.5).clamp(0.0, (m - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(m - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        let (r0, r1, fy) = axis(r, h, bh);
        for c in 0..w {
            let (c0, c1, fx) = axis(c, w, bw);
            let idx = |c: usize, r: usize| (r * bw + c) as u32;
            out.push([
                (idx(c0, r0), (1.0 - fx) * (1.0 - fy)),
                (idx(c1, r0), fx * (1.0 - fy)),
                (idx(c0, r1), (1.0 - fx) * fy),
                (idx(c1, r1), fx * fy),
            ]);
        }
    }
    out
}

/// Fixed data of an alignment problem: cameras, rescaled depth estimates and
/// the sampling taps of every view into the panoramic depth grid.
#[derive(Debug, Clone)]
pub struct AlignProblem {
    cams: Vec<Camera>,
    grid_w: usize,
    grid_h: usize,
    taps: Vec<Vec<[(u32, f64); 4]>>,
    /// Per view: shift grid size and its upsampling taps to view pixels.
    beta_dims: Vec<(usize, usize)>,
    beta_taps: Vec<Vec<[(u32, f64); 4]>>,
    /// `theta[k][i]`: ray-distance depth estimate of view `i` at frame `k`.
    theta: Vec<Vec<Vec<f64>>>,
}

impl AlignProblem {
    /// `theta[k][i]` must be single-channel grids at camera `i`'s resolution.
    /// Shifts live on a grid `beta_downsample` times coarser than each view.
    pub fn new(
        cams: &[Camera],
        theta: &[Vec<Image>],
        grid_w: usize,
        grid_h: usize,
        beta_downsample: usize,
    ) -> Result<Self> {
        if cams.is_empty() || theta.is_empty() {
            return Err(Error::InvalidInput("alignment needs views and frames".into()));
        }
        if beta_downsample == 0 {
            return Err(Error::InvalidInput("shift grid factor must be positive".into()));
        }
        if grid_w != 2 * grid_h || grid_h == 0 {
            return Err(Error::InvalidInput(format!(
                "depth grid must be 2:1, got {grid_w}×{grid_h}"
            )));
        }
        let mut data = Vec::with_capacity(theta.len());
        for frame in theta {
            if frame.len() != cams.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} depth maps for {} cameras",
                    frame.len(),
                    cams.len()
                )));
            }
            let mut views = Vec::with_capacity(cams.len());
            for (img, cam) in frame.iter().zip(cams) {
                if img.dims() != (cam.res_w(), cam.res_h(), 1) {
                    return Err(Error::DimensionMismatch(
                        "depth map does not match its camera".into(),
                    ));
                }
                if img.data().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::DepthEstimator(
                        "depth estimates must be positive and finite".into(),
                    ));
                }
                views.push(img.data().iter().map(|&v| v as f64).collect());
            }
            data.push(views);
        }
        let taps = cams
            .par_iter()
            .map(|cam| {
                let mut t = Vec::with_capacity(cam.res_w() * cam.res_h());
                for r in 0..cam.res_h() {
                    for c in 0..cam.res_w() {
                        let (x, y) = cam.pixel_center(c, r);
                        let (u, v) = dir_to_equirect(&camera_ray(cam, x, y));
                        t.push(equirect_taps(grid_w, grid_h, u, v));
                    }
                }
                t
            })
            .collect();
        let beta_dims: Vec<(usize, usize)> = cams
            .iter()
            .map(|c| {
                (
                    c.res_w().div_ceil(beta_downsample),
                    c.res_h().div_ceil(beta_downsample),
                )
            })
            .collect();
        let beta_taps = cams
            .iter()
            .zip(&beta_dims)
            .map(|(c, &(bw, bh))| upsample_taps(bw, bh, c.res_w(), c.res_h()))
            .collect();
        Ok(AlignProblem {
            cams: cams.to_vec(),
            grid_w,
            grid_h,
            taps,
            beta_dims,
            beta_taps,
            theta: data,
        })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cams
    }

    pub fn frames(&self) -> usize {
        self.theta.len()
    }

    pub fn views(&self) -> usize {
        self.cams.len()
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.grid_w, self.grid_h)
    }

    pub fn theta(&self, k: usize, i: usize) -> &[f64] {
        &self.theta[k][i]
    }

    /// `γ(S)` for view `i`.
    pub fn project(&self, field: &[f64], i: usize) -> Vec<f64> {
        self.taps[i]
            .iter()
            .map(|t| t.iter().map(|&(j, w)| w * field[j as usize]).sum())
            .collect()
    }

    pub fn beta_dims(&self, i: usize) -> (usize, usize) {
        self.beta_dims[i]
    }

    /// Shift grid of view `i` upsampled to its pixels.
    pub fn upsample_beta(&self, beta: &[f64], i: usize) -> Vec<f64> {
        self.beta_taps[i]
            .iter()
            .map(|t| t.iter().map(|&(j, w)| w * beta[j as usize]).sum())
            .collect()
    }

    fn beta_len(&self, i: usize) -> usize {
        let (w, h) = self.beta_dims[i];
        w * h
    }
}

/// Optimization variables of the alignment objective.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentState {
    /// `depth[k]`: panoramic ray-distance field of frame `k`, row-major on the grid.
    pub depth: Vec<Vec<f64>>,
    /// `alpha[k][i]`: pre-softplus scale of view `i` at frame `k`.
    pub alpha: Vec<Vec<f64>>,
    /// `beta[k][i]`: coarse shift grid of view `i` at frame `k`.
    pub beta: Vec<Vec<Vec<f64>>>,
}

impl AlignmentState {
    pub fn zeros(problem: &AlignProblem) -> Self {
        let (gw, gh) = problem.grid_dims();
        let (l, n) = (problem.frames(), problem.views());
        AlignmentState {
            depth: vec![vec![0.0; gw * gh]; l],
            alpha: vec![vec![0.0; n]; l],
            beta: (0..l)
                .map(|_| (0..n).map(|i| vec![0.0; problem.beta_len(i)]).collect())
                .collect(),
        }
    }

    /// Visits every scalar in a fixed order: depth, alpha, beta.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.depth.iter_mut().flatten().for_each(&mut f);
        self.alpha.iter_mut().flatten().for_each(&mut f);
        self.beta.iter_mut().flatten().flatten().for_each(&mut f);
    }

    pub fn len(&self) -> usize {
        self.depth.iter().map(Vec::len).sum::<usize>()
            + self.alpha.iter().map(Vec::len).sum::<usize>()
            + self.beta.iter().flatten().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub depth: f64,
    pub scale: f64,
    pub shift: f64,
}

/// Loss terms summed over frames, each already a mean over views.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub depth: f64,
    pub scale: f64,
    pub shift: f64,
}

impl LossTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.depth * self.depth + w.scale * self.scale + w.shift * self.shift
    }
}

/// Mean over pooled horizontal and vertical forward differences of
/// `sqrt(d² + ε)`, with its gradient accumulated into `grad` times `scale`.
pub fn total_variation(field: &[f64], w: usize, h: usize, grad: Option<(&mut [f64], f64)>) -> f64 {
    let count = (w.saturating_sub(1)) * h + w * (h.saturating_sub(1));
    if count == 0 {
        return 0.0;
    }
    let m = count as f64;
    let mut total = 0.0;
    let mut g = grad;
    let mut visit = |a: usize, b: usize| {
        let d = field[b] - field[a];
        let s = (d * d + TV_EPS).sqrt();
        total += s;
        if let Some((buf, scale)) = g.as_mut() {
            let gd = *scale * d / s / m;
            buf[b] += gd;
            buf[a] -= gd;
        }
    };
    for r in 0..h {
        for c in 0..w.saturating_sub(1) {
            visit(r * w + c, r * w + c + 1);
        }
    }
    for r in 0..h.saturating_sub(1) {
        for c in 0..w {
            visit(r * w + c, (r + 1) * w + c);
        }
    }
    total / m
}

struct ViewTerms {
    depth: f64,
    scale: f64,
    shift: f64,
    g_depth: Vec<f64>,
    g_alpha: f64,
    g_alpha_prev: f64,
    g_beta: Vec<f64>,
    g_beta_prev: Vec<f64>,
}

/// Loss terms of view `i` at frame `k`, unweighted, with gradients scaled by
/// the given weights divided by the view count.
fn view_terms(
    problem: &AlignProblem,
    state: &AlignmentState,
    k: usize,
    i: usize,
    w: &LossWeights,
    want_grad: bool,
) -> ViewTerms {
    let n_views = problem.views() as f64;
    let theta = problem.theta(k, i);
    let beta = &state.beta[k][i];
    let a = state.alpha[k][i];
    let sp = softplus(a);
    let sig = sigmoid(a);
    let proj = problem.project(&state.depth[k], i);
    let shift_px = problem.upsample_beta(beta, i);
    let npx = theta.len() as f64;
    let nb = beta.len() as f64;
    let (gw, gh) = problem.grid_dims();
    let (bw, bh) = problem.beta_dims(i);

    let mut depth = 0.0;
    let mut g_depth = if want_grad { vec![0.0; gw * gh] } else { Vec::new() };
    let mut g_beta = if want_grad { vec![0.0; beta.len()] } else { Vec::new() };
    let mut g_alpha = 0.0;
    let gd_scale = w.depth / n_views;
    for p in 0..theta.len() {
        let r = sp * theta[p] + shift_px[p] - proj[p];
        depth += r * r;
        if want_grad {
            let g = gd_scale * 2.0 * r / npx;
            g_alpha += g * theta[p] * sig;
            for &(j, wt) in &problem.beta_taps[i][p] {
                g_beta[j as usize] += g * wt;
            }
            for &(j, wt) in &problem.taps[i][p] {
                g_depth[j as usize] -= g * wt;
            }
        }
    }
    depth /= npx;

    let gs_scale = w.scale / n_views;
    let mut scale = (sp - 1.0) * (sp - 1.0);
    g_alpha += gs_scale * 2.0 * (sp - 1.0) * sig;
    let mut g_alpha_prev = 0.0;
    if k > 0 {
        let d = a - state.alpha[k - 1][i];
        scale += d * d;
        g_alpha += gs_scale * 2.0 * d;
        g_alpha_prev -= gs_scale * 2.0 * d;
    }

    let gsh_scale = w.shift / n_views;
    let mut shift = total_variation(
        beta,
        bw,
        bh,
        want_grad.then_some((g_beta.as_mut_slice(), gsh_scale)),
    );
    let mut g_beta_prev = Vec::new();
    if k > 0 {
        let prev = &state.beta[k - 1][i];
        if want_grad {
            g_beta_prev = vec![0.0; prev.len()];
        }
        let mut s = 0.0;
        for p in 0..beta.len() {
            let d = beta[p] - prev[p];
            s += d * d;
            if want_grad {
                let g = gsh_scale * 2.0 * d / nb;
                g_beta[p] += g;
                g_beta_prev[p] -= g;
            }
        }
        shift += s / nb;
    }
    ViewTerms {
        depth,
        scale,
        shift,
        g_depth,
        g_alpha,
        g_alpha_prev,
        g_beta,
        g_beta_prev,
    }
}

/// Loss terms of frame `k` (means over views); temporal parts vanish at `k = 0`.
pub fn align_losses(problem: &AlignProblem, state: &AlignmentState, k: usize) -> LossTerms {
    let w = LossWeights {
        depth: 1.0,
        scale: 1.0,
        shift: 1.0,
    };
    let n = problem.views() as f64;
    let mut t = LossTerms::default();
    for i in 0..problem.views() {
        let v = view_terms(problem, state, k, i, &w, false);
        t.depth += v.depth / n;
        t.scale += v.scale / n;
        t.shift += v.shift / n;
    }
    t
}

/// Total objective over all frames and its gradient.
///
/// Per-view work runs in parallel; results are reduced in view order so the
/// gradient is bit-identical across runs.
pub fn objective(
    problem: &AlignProblem,
    state: &AlignmentState,
    weights: &LossWeights,
) -> (LossTerms, AlignmentState) {
    let l = problem.frames();
    let n = problem.views();
    let terms: Vec<ViewTerms> = (0..l * n)
        .into_par_iter()
        .map(|idx| view_terms(problem, state, idx / n, idx % n, weights, true))
        .collect();
    let mut grad = AlignmentState::zeros(problem);
    let mut total = LossTerms::default();
    for (idx, v) in terms.into_iter().enumerate() {
        let (k, i) = (idx / n, idx % n);
        total.depth += v.depth / n as f64;
        total.scale += v.scale / n as f64;
        total.shift += v.shift / n as f64;
        for (g, d) in grad.depth[k].iter_mut().zip(&v.g_depth) {
            *g += d;
        }
        grad.alpha[k][i] += v.g_alpha;
        for (g, d) in grad.beta[k][i].iter_mut().zip(&v.g_beta) {
            *g += d;
        }
        if k > 0 {
            grad.alpha[k - 1][i] += v.g_alpha_prev;
            for (g, d) in grad.beta[k - 1][i].iter_mut().zip(&v.g_beta_prev) {
                *g += d;
            }
        }
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::camera_fan;
    use crate::image::{project_perspective, sample_equirect};

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        assert!(softplus(-40.0) > 0.0);
    }

    #[test]
    fn taps_match_image_sampler() {
        let img = Image::from_fn(16, 8, 1, |c, r, px| px[0] = ((c * 7 + r * 3) % 11) as f32);
        let field: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
        for d in [
            crate::geom::Direction::new(0.3, -0.9, 0.2).unwrap(),
            crate::geom::Direction::new(-0.01, -1.0, 0.0).unwrap(),
            crate::geom::Direction::new(0.1, 0.1, 0.99).unwrap(),
        ] {
            let (u, v) = dir_to_equirect(&d);
            let s: f64 = equirect_taps(16, 8, u, v)
                .iter()
                .map(|&(j, w)| w * field[j as usize])
                .sum();
            assert!((s - sample_equirect(&img, &d)[0] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn upsample_taps_interpolate_linear_fields() {
        let (bw, bh, w, h) = (4, 3, 16, 12);
        let coarse: Vec<f64> = (0..bw * bh).map(|j| (j % bw) as f64 * 2.0 + (j / bw) as f64).collect();
        let taps = upsample_taps(bw, bh, w, h);
        for (p, t) in taps.iter().enumerate() {
            assert!((t.iter().map(|&(_, wt)| wt).sum::<f64>() - 1.0).abs() < 1e-12);
            let (c, r) = (p % w, p / w);
            let x = ((c as f64 + 0.5) * bw as f64 / w as f64 - 0.5).clamp(0.0, (bw - 1) as f64);
            let y = ((r as f64 + 0.5) * bh as f64 / h as f64 - 0.5).clamp(0.0, (bh - 1) as f64);
            let s: f64 = t.iter().map(|&(j, wt)| wt * coarse[j as usize]).sum();
            assert!((s - (2.0 * x + y)).abs() < 1e-12);
        }
        let same = upsample_taps(5, 5, 5, 5);
        for (p, t) in same.iter().enumerate() {
            let s: f64 = t.iter().filter(|&&(j, _)| j as usize == p).map(|&(_, wt)| wt).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_gradient_vanishes_on_constants() {
        let f = vec![0.7; 12];
        let mut g = vec![0.0; 12];
        total_variation(&f, 4, 3, Some((&mut g, 1.0)));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn consistent_views_have_zero_depth_loss() {
        let (gw, gh) = (32, 16);
        let field = Image::from_fn(gw, gh, 1, |c, r, px| px[0] = 2.0 + ((c + r) % 5) as f32 * 0.1);
        let cams: Vec<Camera> = camera_fan(80.0, 8).unwrap();
        // Θ = γ(S)/ln2, so softplus(0)·Θ − γ(S) = 0.
        let theta: Vec<Image> = cams
            .iter()
            .map(|c| {
                let mut p = project_perspective(&field, c);
                p.data_mut().iter_mut().for_each(|v| *v /= std::f32::consts::LN_2);
                p
            })
            .collect();
        let prob = AlignProblem::new(&cams, &[theta], gw, gh, 4).unwrap();
        let mut state = AlignmentState::zeros(&prob);
        state.depth[0] = field.data().iter().map(|&v| v as f64).collect();
        let t = align_losses(&prob, &state, 0);
        assert!(t.depth < 1e-10, "{}", t.depth);
    }
}
