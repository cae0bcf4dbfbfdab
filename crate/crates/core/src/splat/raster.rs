//! EWA splatting of a [`GaussianSet`] into a pinhole view, and its adjoint.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector3};
use rayon::prelude::*;

use super::gaussians::{normalize_quat, rotation_matrix, rotation_matrix_vjp, GaussianSet};
use crate::error::{Error, Result};
use crate::geom::Camera;
use crate::image::Image;

pub const TILE: usize = 16;
/// Screen-space dilation added to every projected covariance, in pixels².
pub const LOW_PASS: f64 = 0.3;
/// Centers further outside the frustum than this factor of its half extent are culled.
pub const GUARD_BAND: f64 = 1.3;
/// Footprints are cut at this Mahalanobis distance.
pub const CUTOFF_SIGMA: f64 = 3.0;

/// `exp(-CUTOFF_SIGMA²/2)`, subtracted so the kernel reaches zero at the cut.
fn kernel_floor() -> f64 {
    (-0.5 * CUTOFF_SIGMA * CUTOFF_SIGMA).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub background: [f64; 3],
    /// Compositing stops once transmittance falls below this.
    pub cutoff: f64,
    /// Depth written where nothing is hit.
    pub far: f64,
    /// Gaussians closer than this along the axis are culled.
    pub near: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            background: [0.0; 3],
            cutoff: 1e-4,
            far: 100.0,
            near: 0.01,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) || !(self.near > 0.0) || !(self.far > 0.0) {
            return Err(Error::InvalidInput(format!("invalid render settings {self:?}")));
        }
        Ok(())
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy)]
struct Splat {
    u: f64,
    v: f64,
    /// Inverse screen covariance `(a, b, c)` of `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    dist: f64,
    tz: f64,
    /// Pixel bounding box, inclusive.
    bbox: [usize; 4],
}

/// Forward intermediates kept for [`rasterize_backward`].
#[derive(Debug, Clone)]
pub struct RasterState {
    cam: Camera,
    pos: Vector3<f64>,
    settings: RenderSettings,
    splats: Vec<Option<Splat>>,
    /// Per tile, splat indices in compositing order.
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    /// Per pixel: number of splats visited.
    visited: Vec<u32>,
    /// Per pixel: sum of compositing weights and expected distance.
    weight: Vec<f64>,
    depth: Vec<f64>,
    rgb: Vec<f64>,
}

impl RasterState {
    /// Full-precision color, row-major with 3 channels.
    pub fn rgb(&self) -> &[f64] {
        &self.rgb
    }

    /// Full-precision depth, row-major.
    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    /// Per-pixel sum of compositing weights.
    pub fn coverage(&self) -> &[f64] {
        &self.weight
    }

    pub fn camera(&self) -> &Camera {
        &self.cam
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.pos
    }
}

#[derive(Debug, Clone)]
pub struct Render {
    pub rgb: Image,
    pub depth: Image,
    pub alpha: Image,
    pub state: RasterState,
}

/// Camera-frame rotation: rows are right, up, axis.
fn view_matrix(cam: &Camera) -> Matrix3<f64> {
    let a = cam.axis();
    Matrix3::from_rows(&[
        cam.right().transpose(),
        cam.up().transpose(),
        a.as_vector().transpose(),
    ])
}

/// Screen-space projection Jacobian at camera-frame point `t`.
fn projection_jacobian(t: &Vector3<f64>, fx: f64, fy: f64) -> Matrix3x2<f64> {
    let (tx, ty, tz) = (t.x, t.y, t.z);
    // Stored transposed: columns are the u and v rows.
    Matrix3x2::new(
        fx / tz,
        0.0,
        0.0,
        -fy / tz,
        -fx * tx / (tz * tz),
        fy * ty / (tz * tz),
    )
}

fn project_one(
    g: &GaussianSet,
    i: usize,
    w: &Matrix3<f64>,
    cam: &Camera,
    pos: &Vector3<f64>,
    settings: &RenderSettings,
) -> Option<Splat> {
    let p = g.position(i);
    let t = w * (p - pos);
    if t.z < settings.near {
        return None;
    }
    let (pw, ph) = cam.plane_size();
    let limit_x = GUARD_BAND * 0.5 * pw / cam.focal();
    let limit_y = GUARD_BAND * 0.5 * ph / cam.focal();
    if (t.x / t.z).abs() > limit_x || (t.y / t.z).abs() > limit_y {
        return None;
    }
    let (fx, fy) = cam.focal_pixels();
    let (cx, cy) = cam.principal_point();
    let u = cx + fx * t.x / t.z;
    let v = cy - fy * t.y / t.z;
    let jt = projection_jacobian(&t, fx, fy);
    let sigma_cam = w * g.covariance(i) * w.transpose();
    let s2 = jt.transpose() * sigma_cam * jt + Matrix2::identity() * LOW_PASS;
    let det = s2[(0, 0)] * s2[(1, 1)] - s2[(0, 1)] * s2[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = [s2[(1, 1)] / det, -s2[(0, 1)] / det, s2[(0, 0)] / det];
    // Bounding box from the marginal standard deviations.
    let ru = CUTOFF_SIGMA * s2[(0, 0)].sqrt();
    let rv = CUTOFF_SIGMA * s2[(1, 1)].sqrt();
    let (wf, hf) = (cam.res_w() as f64, cam.res_h() as f64);
    // Pixel centers sit at integer coordinates.
    let c0 = (u - ru).ceil().max(0.0);
    let c1 = (u + ru).floor().min(wf - 1.0);
    let r0 = (v - rv).ceil().max(0.0);
    let r1 = (v + rv).floor().min(hf - 1.0);
    if !(c0 <= c1 && r0 <= r1) {
        return None;
    }
    Some(Splat {
        u,
        v,
        conic,
        opacity: g.opacity(i),
        color: g.color(i),
        dist: (p - pos).norm(),
        tz: t.z,
        bbox: [c0 as usize, c1 as usize, r0 as usize, r1 as usize],
    })
}

/// Opacity of splat `s` at pixel `(px, py)` and the Mahalanobis power.
#[inline]
fn splat_alpha(s: &Splat, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = px - s.u;
    let dy = py - s.v;
    let [a, b, c] = s.conic;
    let m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if m >= CUTOFF_SIGMA * CUTOFF_SIGMA {
        return None;
    }
    let floor = kernel_floor();
    let k = ((-0.5 * m).exp() - floor) / (1.0 - floor);
    let alpha = s.opacity * k;
    if alpha <= 0.0 {
        return None;
    }
    Some((alpha, k, dx, dy))
}

/// Renders color, expected ray distance and coverage of `g` from a camera
/// with orientation `cam` placed at `pos`.
pub fn rasterize(
    g: &GaussianSet,
    cam: &Camera,
    pos: &Vector3<f64>,
    settings: &RenderSettings,
) -> Result<Render> {
    settings.validate()?;
    g.check()?;
    let w = view_matrix(cam);
    let splats: Vec<Option<Splat>> = (0..g.len())
        .into_par_iter()
        .map(|i| project_one(g, i, &w, cam, pos, settings))
        .collect();
    let mut order: Vec<u32> = (0..g.len() as u32)
        .filter(|&i| splats[i as usize].is_some())
        .collect();
    order.sort_by(|&a, &b| {
        let ta = splats[a as usize].as_ref().map_or(0.0, |s| s.tz);
        let tb = splats[b as usize].as_ref().map_or(0.0, |s| s.tz);
        ta.total_cmp(&tb).then(a.cmp(&b))
    });
    let (rw, rh) = (cam.res_w(), cam.res_h());
    let tiles_x = rw.div_ceil(TILE);
    let tiles_y = rh.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for &i in &order {
        let s = splats[i as usize].as_ref().expect("filtered");
        for ty in s.bbox[2] / TILE..=s.bbox[3] / TILE {
            for tx in s.bbox[0] / TILE..=s.bbox[1] / TILE {
                tiles[ty * tiles_x + tx].push(i);
            }
        }
    }

    struct TileOut {
        rgb: Vec<f64>,
        final_t: Vec<f64>,
        visited: Vec<u32>,
        weight: Vec<f64>,
        depth: Vec<f64>,
    }
    let outs: Vec<TileOut> = (0..tiles.len())
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let n = TILE * TILE;
            let mut o = TileOut {
                rgb: vec![0.0; 3 * n],
                final_t: vec![1.0; n],
                visited: vec![0; n],
                weight: vec![0.0; n],
                depth: vec![0.0; n],
            };
            for ly in 0..TILE {
                let row = ty * TILE + ly;
                if row >= rh {
                    break;
                }
                for lx in 0..TILE {
                    let col = tx * TILE + lx;
                    if col >= rw {
                        break;
                    }
                    let li = ly * TILE + lx;
                    let mut t = 1.0;
                    let mut rgb = [0.0; 3];
                    let mut dnum = 0.0;
                    let mut visited = 0u32;
                    for (k, &gi) in tiles[tile].iter().enumerate() {
                        let s = splats[gi as usize].as_ref().expect("tiled");
                        visited = k as u32 + 1;
                        let Some((alpha, ..)) = splat_alpha(s, col as f64, row as f64) else {
                            continue;
                        };
                        let wgt = alpha * t;
                        for c in 0..3 {
                            rgb[c] += wgt * s.color[c];
                        }
                        dnum += wgt * s.dist;
                        t *= 1.0 - alpha;
                        if t < settings.cutoff {
                            break;
                        }
                    }
                    o.rgb[3 * li..3 * li + 3].copy_from_slice(&rgb);
                    o.final_t[li] = t;
                    o.visited[li] = visited;
                    o.weight[li] = 1.0 - t;
                    o.depth[li] = dnum;
                }
            }
            o
        })
        .collect();

    let mut rgb = Image::new(rw, rh, 3);
    let mut depth_img = Image::new(rw, rh, 1);
    let mut alpha_img = Image::new(rw, rh, 1);
    let mut visited = vec![0; rw * rh];
    let mut weight = vec![0.0; rw * rh];
    let mut depth = vec![settings.far; rw * rh];
    let mut rgb64 = vec![0.0; 3 * rw * rh];
    for (tile, o) in outs.iter().enumerate() {
        let (tx, ty) = (tile % tiles_x, tile / tiles_x);
        for ly in 0..TILE.min(rh - ty * TILE) {
            for lx in 0..TILE.min(rw - tx * TILE) {
                let (col, row) = (tx * TILE + lx, ty * TILE + ly);
                let li = ly * TILE + lx;
                let p = row * rw + col;
                let t = o.final_t[li];
                let px = rgb.pixel_mut(col, row);
                for c in 0..3 {
                    let v = o.rgb[3 * li + c] + t * settings.background[c];
                    rgb64[3 * p + c] = v;
                    px[c] = v as f32;
                }
                visited[p] = o.visited[li];
                weight[p] = o.weight[li];
                if o.weight[li] > 0.0 {
                    depth[p] = o.depth[li] / o.weight[li];
                }
                depth_img.pixel_mut(col, row)[0] = depth[p] as f32;
                alpha_img.pixel_mut(col, row)[0] = o.weight[li] as f32;
            }
        }
    }
    Ok(Render {
        rgb,
        depth: depth_img,
        alpha: alpha_img,
        state: RasterState {
            cam: cam.clone(),
            pos: *pos,
            settings: settings.clone(),
            splats,
            tiles,
            tiles_x,
            visited,
            weight,
            depth,
            rgb: rgb64,
        },
    })
}

/// Gradients with the same layout as [`GaussianSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub colors: Vec<f64>,
    pub opacity_logits: Vec<f64>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        GaussianGrads {
            positions: vec![0.0; 3 * n],
            rotations: vec![0.0; 4 * n],
            log_scales: vec![0.0; 3 * n],
            colors: vec![0.0; 3 * n],
            opacity_logits: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &GaussianGrads, scale: f64) {
        let pairs = [
            (&mut self.positions, &other.positions),
            (&mut self.rotations, &other.rotations),
            (&mut self.log_scales, &other.log_scales),
            (&mut self.colors, &other.colors),
            (&mut self.opacity_logits, &other.opacity_logits),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

/// Screen-space gradient of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    u: f64,
    v: f64,
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    dist: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.u += o.u;
        self.v += o.v;
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.dist += o.dist;
    }
}

/// Backpropagates `dL/d rgb` (3 channels) and optionally `dL/d depth` through
/// the render in `state`.
pub fn rasterize_backward(
    g: &GaussianSet,
    state: &RasterState,
    grad_rgb: &Image,
    grad_depth: Option<&Image>,
) -> Result<GaussianGrads> {
    let cam = &state.cam;
    let (rw, rh) = (cam.res_w(), cam.res_h());
    if grad_rgb.dims() != (rw, rh, 3) {
        return Err(Error::DimensionMismatch("rgb gradient does not match render".into()));
    }
    if let Some(gd) = grad_depth {
        if gd.dims() != (rw, rh, 1) {
            return Err(Error::DimensionMismatch("depth gradient does not match render".into()));
        }
    }
    if g.len() != state.splats.len() {
        return Err(Error::DimensionMismatch("Gaussian set changed since the render".into()));
    }
    let bg = state.settings.background;
    let cutoff = state.settings.cutoff;

    let tile_grads: Vec<Vec<SplatGrad>> = (0..state.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &state.tiles[tile];
            let mut acc = vec![SplatGrad::default(); list.len()];
            let (tx, ty) = (tile % state.tiles_x, tile / state.tiles_x);
            let mut alphas: Vec<(usize, f64, f64, f64, f64, f64)> = Vec::new();
            for row in ty * TILE..((ty + 1) * TILE).min(rh) {
                for col in tx * TILE..((tx + 1) * TILE).min(rw) {
                    let p = row * rw + col;
                    let gc = grad_rgb.pixel(col, row);
                    let gc = [gc[0] as f64, gc[1] as f64, gc[2] as f64];
                    let wsum = state.weight[p];
                    // Depth = Dnum / W, so dL/dDnum = gD/W and dL/dW = −gD·depth/W.
                    let (g_dnum, g_w) = match grad_depth {
                        Some(gd) if wsum > 0.0 => {
                            let gd = gd.get(col, row, 0) as f64;
                            (gd / wsum, -gd * state.depth[p] / wsum)
                        }
                        _ => (0.0, 0.0),
                    };
                    alphas.clear();
                    let mut t = 1.0;
                    for (k, &gi) in list.iter().take(state.visited[p] as usize).enumerate() {
                        let s = state.splats[gi as usize].as_ref().expect("tiled");
                        let Some((alpha, kern, dx, dy)) = splat_alpha(s, col as f64, row as f64)
                        else {
                            continue;
                        };
                        alphas.push((k, alpha, kern, dx, dy, t));
                        t *= 1.0 - alpha;
                        if t < cutoff {
                            break;
                        }
                    }
                    // Value of everything behind the current splat, per unit
                    // transmittance in front of it.
                    let mut behind = gc[0] * bg[0] + gc[1] * bg[1] + gc[2] * bg[2];
                    for &(k, alpha, kern, dx, dy, t_i) in alphas.iter().rev() {
                        let s = state.splats[list[k] as usize].as_ref().expect("tiled");
                        let feat = gc[0] * s.color[0]
                            + gc[1] * s.color[1]
                            + gc[2] * s.color[2]
                            + g_dnum * s.dist
                            + g_w;
                        let wgt = alpha * t_i;
                        let g_alpha = t_i * (feat - behind);
                        behind = feat * alpha + (1.0 - alpha) * behind;
                        let a = &mut acc[k];
                        for c in 0..3 {
                            a.color[c] += gc[c] * wgt;
                        }
                        a.dist += g_dnum * wgt;
                        a.opacity += g_alpha * kern;
                        let floor = kernel_floor();
                        let [ca, cb, cc] = s.conic;
                        let m = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
                        // kern = (exp(−m/2) − floor)/(1 − floor).
                        let g_m = g_alpha * s.opacity * (-0.5) * (-0.5 * m).exp() / (1.0 - floor);
                        a.conic[0] += g_m * dx * dx;
                        a.conic[1] += g_m * 2.0 * dx * dy;
                        a.conic[2] += g_m * dy * dy;
                        // dx = px − u.
                        a.u -= g_m * 2.0 * (ca * dx + cb * dy);
                        a.v -= g_m * 2.0 * (cb * dx + cc * dy);
                    }
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![SplatGrad::default(); g.len()];
    for (tile, grads) in tile_grads.iter().enumerate() {
        for (k, sg) in grads.iter().enumerate() {
            screen[state.tiles[tile][k] as usize].add(sg);
        }
    }

    let w = view_matrix(cam);
    let (fx, fy) = cam.focal_pixels();
    let per: Vec<_> = (0..g.len())
        .into_par_iter()
        .map(|i| state.splats[i].as_ref().map(|_| splat_param_grads(g, i, &screen[i], &w, fx, fy, &state.pos)))
        .collect();
    let mut out = GaussianGrads::zeros(g.len());
    for (i, pg) in per.into_iter().enumerate() {
        let Some(pg) = pg else { continue };
        out.positions[3 * i..3 * i + 3].copy_from_slice(&pg.position);
        out.rotations[4 * i..4 * i + 4].copy_from_slice(&pg.rotation);
        out.log_scales[3 * i..3 * i + 3].copy_from_slice(&pg.log_scale);
        out.colors[3 * i..3 * i + 3].copy_from_slice(&pg.color);
        out.opacity_logits[i] = pg.opacity_logit;
    }
    Ok(out)
}

struct ParamGrad {
    position: [f64; 3],
    rotation: [f64; 4],
    log_scale: [f64; 3],
    color: [f64; 3],
    opacity_logit: f64,
}

fn splat_param_grads(
    g: &GaussianSet,
    i: usize,
    sg: &SplatGrad,
    w: &Matrix3<f64>,
    fx: f64,
    fy: f64,
    pos: &Vector3<f64>,
) -> ParamGrad {
    let p = g.position(i);
    let rel = p - pos;
    let t = w * rel;
    let q = normalize_quat(g.rotation(i));
    let r = rotation_matrix(&q);
    let sc = g.scale(i);
    let m = r * Matrix3::from_diagonal(&Vector3::new(sc[0], sc[1], sc[2]));
    let sigma3 = m * m.transpose();
    let sigma_cam = w * sigma3 * w.transpose();
    let jt = projection_jacobian(&t, fx, fy);
    let j = jt.transpose();
    let s2 = j * sigma_cam * jt + Matrix2::identity() * LOW_PASS;
    let k = s2.try_inverse().unwrap_or_else(Matrix2::zeros);

    // Conic entries (a, b, c) map to K = [[a, b], [b, c]]; power uses 2b.
    let gk = Matrix2::new(sg.conic[0], sg.conic[1] * 0.5, sg.conic[1] * 0.5, sg.conic[2]);
    let g_s2 = -(k * gk * k);
    let g_sigma_cam = jt * g_s2 * j;
    let g_j = (g_s2 + g_s2.transpose()) * j * sigma_cam;
    let g_sigma3 = w.transpose() * g_sigma_cam * w;
    let g_m = (g_sigma3 + g_sigma3.transpose()) * m;
    let mut g_r = Matrix3::zeros();
    let mut log_scale = [0.0; 3];
    for col in 0..3 {
        let mut dot = 0.0;
        for row in 0..3 {
            g_r[(row, col)] = g_m[(row, col)] * sc[col];
            dot += g_m[(row, col)] * r[(row, col)];
        }
        log_scale[col] = dot * sc[col];
    }
    let g_qhat = rotation_matrix_vjp(&q, &g_r);
    let raw = g.rotation(i);
    let qn = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let proj: f64 = (0..4).map(|k| q[k] * g_qhat[k]).sum();
    let rotation = [
        (g_qhat[0] - q[0] * proj) / qn,
        (g_qhat[1] - q[1] * proj) / qn,
        (g_qhat[2] - q[2] * proj) / qn,
        (g_qhat[3] - q[3] * proj) / qn,
    ];

    // u = cx + fx·tx/tz, v = cy − fy·ty/tz; J rows are (fx/tz, 0, −fx·tx/tz²)
    // and (0, −fy/tz, fy·ty/tz²).
    let (tx, ty, tz) = (t.x, t.y, t.z);
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut g_t = Vector3::new(
        sg.u * fx / tz,
        -sg.v * fy / tz,
        -sg.u * fx * tx / tz2 + sg.v * fy * ty / tz2,
    );
    g_t.z += g_j[(0, 0)] * (-fx / tz2);
    g_t.x += g_j[(0, 2)] * (-fx / tz2);
    g_t.z += g_j[(0, 2)] * (2.0 * fx * tx / tz3);
    g_t.z += g_j[(1, 1)] * (fy / tz2);
    g_t.y += g_j[(1, 2)] * (fy / tz2);
    g_t.z += g_j[(1, 2)] * (-2.0 * fy * ty / tz3);
    let dist = rel.norm();
    let g_p = w.transpose() * g_t + rel * (sg.dist / dist);

    let o = g.opacity(i);
    ParamGrad {
        position: [g_p.x, g_p.y, g_p.z],
        rotation,
        log_scale,
        color: sg.color,
        opacity_logit: sg.opacity * o * (1.0 - o),
    }
}
