//! Gaussian-window SSIM with its gradient.
//!
//! Windows are renormalized where they overlap the image border, so every
//! local statistic is a proper weighted mean.

use crate::error::Result;
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    k
}

/// Border-renormalized 1-D filter along one axis of an `h × w` plane.
struct Axis {
    kernel: [f64; SSIM_WINDOW],
    /// Per output position, the sum of in-bounds kernel weights.
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
    w: usize,
    h: usize,
}

impl Axis {
    fn new(w: usize, h: usize) -> Self {
        let kernel = kernel();
        let norms = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|p| {
                    (0..SSIM_WINDOW)
                        .filter_map(|i| {
                            let q = p as isize + i as isize - (SSIM_WINDOW / 2) as isize;
                            (0..n as isize).contains(&q).then_some(kernel[i])
                        })
                        .sum()
                })
                .collect()
        };
        Axis {
            kernel,
            norm_x: norms(w),
            norm_y: norms(h),
            w,
            h,
        }
    }

    /// `W f` (normalized filter) or `Wᵀ f` (transpose) over the plane.
    fn apply(&self, f: &[f64], transpose: bool) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let half = (SSIM_WINDOW / 2) as isize;
        let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
            let mut out = vec![0.0; w * h];
            let (n, norm) = if along_x {
                (w, &self.norm_x)
            } else {
                (h, &self.norm_y)
            };
            for r in 0..h {
                for c in 0..w {
                    let p = if along_x { c } else { r };
                    let mut acc = 0.0;
                    for i in 0..SSIM_WINDOW {
                        let q = p as isize + i as isize - half;
                        if q < 0 || q >= n as isize {
                            continue;
                        }
                        let q = q as usize;
                        let idx = if along_x { r * w + q } else { q * w + c };
                        // Forward: out(p) = Σ_q g(q−p) f(q) / Z(p).
                        // Transpose: out(q') = Σ_p g(q'−p) f(p) / Z(p), same taps read at q.
                        acc += if transpose {
                            self.kernel[i] * src[idx] / norm[q]
                        } else {
                            self.kernel[i] * src[idx]
                        };
                    }
                    out[r * w + c] = if transpose { acc } else { acc / norm[p] };
                }
            }
            out
        };
        if transpose {
            pass(&pass(f, false), true)
        } else {
            pass(&pass(f, true), false)
        }
    }
}

/// Per-channel local statistics and the SSIM map of one plane.
fn plane(a: &[f64], b: &[f64], axis: &Axis, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mx = axis.apply(a, false);
    let my = axis.apply(b, false);
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let exx = axis.apply(&sq(a, a), false);
    let eyy = axis.apply(&sq(b, b), false);
    let exy = axis.apply(&sq(a, b), false);
    let n = a.len();
    let mut total = 0.0;
    let (mut g_mu, mut g_var, mut g_cov) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (ux, uy) = (mx[p], my[p]);
        let vx = exx[p] - ux * ux;
        let vy = eyy[p] - uy * uy;
        let cxy = exy[p] - ux * uy;
        let num_a = 2.0 * ux * uy + c1;
        let num_b = 2.0 * cxy + c2;
        let den_c = ux * ux + uy * uy + c1;
        let den_d = vx + vy + c2;
        let s = num_a * num_b / (den_c * den_d);
        total += s;
        if want_grad {
            let d_ux = 2.0 * uy * num_b / (den_c * den_d) - s * 2.0 * ux / den_c;
            let d_vx = -s / den_d;
            let d_cxy = 2.0 * num_a / (den_c * den_d);
            g_mu[p] = d_ux - 2.0 * ux * d_vx - uy * d_cxy;
            g_var[p] = d_vx;
            g_cov[p] = d_cxy;
        }
    }
    if !want_grad {
        return (total, None);
    }
    let t_mu = axis.apply(&g_mu, true);
    let t_var = axis.apply(&g_var, true);
    let t_cov = axis.apply(&g_cov, true);
    let grad = (0..n)
        .map(|q| t_mu[q] + 2.0 * a[q] * t_var[q] + b[q] * t_cov[q])
        .collect();
    (total, Some(grad))
}

fn run(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f32>>)> {
    a.same_dims(b)?;
    let (w, h, c) = a.dims();
    let axis = Axis::new(w, h);
    let count = (w * h * c) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0f32; w * h * c]);
    for ch in 0..c {
        let pa: Vec<f64> = a.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
        let (s, g) = plane(&pa, &pb, &axis, want_grad);
        total += s;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            for (i, v) in g.into_iter().enumerate() {
                out[i * c + ch] = (v / count) as f32;
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean SSIM over pixels and channels, for unit dynamic range.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(run(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f32>)> {
    let (s, g) = run(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: usize, h: usize, seed: u32) -> Image {
        Image::from_fn(w, h, 2, |c, r, px| {
            for (k, v) in px.iter_mut().enumerate() {
                let x = (c * 31 + r * 17 + k * 7) as f32 + seed as f32;
                *v = 0.5 + 0.4 * (x * 0.37).sin() * (x * 0.11).cos();
            }
        })
    }

    #[test]
    fn identical_images_score_one() {
        let a = noise(12, 9, 0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let flat = Image::filled(12, 9, 2, 0.4);
        assert!((ssim(&flat, &flat).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_flip_invariant() {
        let a = noise(14, 10, 1);
        let b = noise(14, 10, 5);
        let s = ssim(&a, &b).unwrap();
        assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let flip = |img: &Image| {
            Image::from_fn(14, 10, 2, |c, r, px| px.copy_from_slice(img.pixel(13 - c, r)))
        };
        assert!((s - ssim(&flip(&a), &flip(&b)).unwrap()).abs() < 1e-9);
        assert!(s < 0.99);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let a = noise(16, 16, 2);
        let b = noise(16, 16, 9);
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-3f32;
        for &i in &[0usize, 5, 37, 130, 255, 300, 511] {
            let mut p = a.clone();
            p.data_mut()[i] += h;
            let mut m = a.clone();
            m.data_mut()[i] -= h;
            let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h as f64);
            let rel = (fd - g[i] as f64).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-3, "index {i}: fd {fd} analytic {}", g[i]);
        }
    }
}
