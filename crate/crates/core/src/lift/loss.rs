use crate::error::{Error, Result};
use crate::eval::ssim_with_grad;
use crate::image::Image;

/// Variance floor of the depth correlation term.
pub const PEARSON_EPS: f64 = 1e-8;

/// A scalar loss and its gradient with respect to the first image argument.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Image,
}

/// `mix·L1 + (1 − mix)·(1 − SSIM)` of `render` against `target`.
pub fn loss_rgb(render: &Image, target: &Image, mix: f64) -> Result<LossGrad> {
    render.same_dims(target)?;
    let n = render.data().len() as f64;
    let (s, gs) = ssim_with_grad(render, target)?;
    let mut l1 = 0.0;
    let grad: Vec<f32> = render
        .data()
        .iter()
        .zip(target.data())
        .zip(&gs)
        .map(|((r, t), g)| {
            let d = *r as f64 - *t as f64;
            l1 += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (mix * sign / n - (1.0 - mix) * *g as f64) as f32
        })
        .collect();
    let (w, h, c) = render.dims();
    Ok(LossGrad {
        value: mix * l1 / n + (1.0 - mix) * (1.0 - s),
        grad: Image::from_data(w, h, c, grad)?,
    })
}

/// Mean squared difference between a render and its predecessor's render.
pub fn loss_temporal(render: &Image, previous: &Image) -> Result<LossGrad> {
    render.same_dims(previous)?;
    let n = render.data().len() as f64;
    let mut total = 0.0;
    let grad: Vec<f32> = render
        .data()
        .iter()
        .zip(previous.data())
        .map(|(r, p)| {
            let d = *r as f64 - *p as f64;
            total += d * d;
            (2.0 * d / n) as f32
        })
        .collect();
    let (w, h, c) = render.dims();
    Ok(LossGrad {
        value: total / n,
        grad: Image::from_data(w, h, c, grad)?,
    })
}

/// `1 − Pearson(depth, target)`. A constant render contributes 1 with zero
/// gradient.
pub fn loss_geo(depth: &Image, target: &Image) -> Result<LossGrad> {
    depth.same_dims(target)?;
    if depth.channels() != 1 {
        return Err(Error::DimensionMismatch("depth maps must have one channel".into()));
    }
    let n = depth.data().len() as f64;
    let x: Vec<f64> = depth.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(&y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov /= n;
    vx /= n;
    vy /= n;
    let (w, h, _) = depth.dims();
    if vx < PEARSON_EPS {
        log::warn!("rendered depth is constant; geometric term contributes 1");
        return Ok(LossGrad {
            value: 1.0,
            grad: Image::new(w, h, 1),
        });
    }
    let vy = vy.max(PEARSON_EPS);
    let sx = vx.sqrt();
    let sy = vy.sqrt();
    let r = cov / (sx * sy);
    let grad: Vec<f32> = x
        .iter()
        .zip(&y)
        .map(|(a, b)| {
            let dr = (b - my) / (n * sx * sy) - r * (a - mx) / (n * vx);
            (-dr) as f32
        })
        .collect();
    Ok(LossGrad {
        value: 1.0 - r,
        grad: Image::from_data(w, h, 1, grad)?,
    })
}

/// Global image descriptor `CLS(·)` compared by cosine similarity.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, img: &Image) -> Result<Vec<f64>>;

    /// Pulls a feature-space gradient back to the image.
    fn backward(&self, img: &Image, grad: &[f64]) -> Result<Image>;
}

/// Concatenated block means over three block sizes, unit-normalized.
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    pub blocks: [usize; 3],
}

impl Default for PyramidFeatures {
    fn default() -> Self {
        PyramidFeatures { blocks: [4, 8, 16] }
    }
}

impl PyramidFeatures {
    fn raw(&self, img: &Image) -> Vec<f64> {
        let (w, h, c) = img.dims();
        let mut out = Vec::new();
        for &b in &self.blocks {
            let (bw, bh) = (w.div_ceil(b), h.div_ceil(b));
            let mut sums = vec![0.0; bw * bh * c];
            let mut counts = vec![0usize; bw * bh];
            for r in 0..h {
                for col in 0..w {
                    let cell = (r / b) * bw + col / b;
                    counts[cell] += 1;
                    for (k, v) in img.pixel(col, r).iter().enumerate() {
                        sums[cell * c + k] += *v as f64;
                    }
                }
            }
            for (cell, &n) in counts.iter().enumerate() {
                for k in 0..c {
                    out.push(sums[cell * c + k] / n as f64);
                }
            }
        }
        out
    }
}

impl FeatureExtractor for PyramidFeatures {
    fn features(&self, img: &Image) -> Result<Vec<f64>> {
        let raw = self.raw(img);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(raw);
        }
        Ok(raw.into_iter().map(|v| v / norm).collect())
    }

    fn backward(&self, img: &Image, grad: &[f64]) -> Result<Image> {
        let raw = self.raw(img);
        if grad.len() != raw.len() {
            return Err(Error::DimensionMismatch("feature gradient length".into()));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Through the normalization: g_raw = (g − f (f·g)) / |raw|.
        let g_raw: Vec<f64> = if norm == 0.0 {
            vec![0.0; raw.len()]
        } else {
            let dot: f64 = raw.iter().zip(grad).map(|(r, g)| r * g).sum::<f64>() / norm;
            raw.iter()
                .zip(grad)
                .map(|(r, g)| (g - r / norm * dot) / norm)
                .collect()
        };
        let (w, h, c) = img.dims();
        let mut out = Image::new(w, h, c);
        let mut offset = 0;
        for &b in &self.blocks {
            let (bw, bh) = (w.div_ceil(b), h.div_ceil(b));
            for r in 0..h {
                for col in 0..w {
                    let (cr, cc) = (r / b, col / b);
                    let rows = (b).min(h - cr * b);
                    let cols = (b).min(w - cc * b);
                    let area = (rows * cols) as f64;
                    let cell = cr * bw + cc;
                    let px = out.pixel_mut(col, r);
                    for (k, v) in px.iter_mut().enumerate() {
                        *v += (g_raw[offset + cell * c + k] / area) as f32;
                    }
                }
            }
            offset += bw * bh * c;
        }
        Ok(out)
    }
}

/// `1 − cos⟨F(a), F(b)⟩` with gradients for both images.
pub fn loss_sem(
    extractor: &dyn FeatureExtractor,
    a: &Image,
    b: &Image,
) -> Result<(f64, Image, Image)> {
    let fa = extractor.features(a)?;
    let fb = extractor.features(b)?;
    if fa.len() != fb.len() {
        return Err(Error::DimensionMismatch("feature lengths differ".into()));
    }
    let na = fa.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = fb.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok((1.0, Image::new(a.width(), a.height(), a.channels()), Image::new(b.width(), b.height(), b.channels())));
    }
    let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    // d cos / d fa = fb/(|fa||fb|) − cos·fa/|fa|²; the loss is 1 − cos.
    let ga: Vec<f64> = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| -(y / (na * nb) - cos * x / (na * na)))
        .collect();
    let gb: Vec<f64> = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| -(x / (na * nb) - cos * y / (nb * nb)))
        .collect();
    Ok((1.0 - cos, extractor.backward(a, &ga)?, extractor.backward(b, &gb)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize, c: usize, seed: f32) -> Image {
        Image::from_fn(w, h, c, |x, y, px| {
            for (k, v) in px.iter_mut().enumerate() {
                let t = (x * 13 + y * 7 + k * 5) as f32 + seed;
                *v = 0.5 + 0.3 * (t * 0.21).sin() + 0.1 * (t * 0.07).cos();
            }
        })
    }

    fn check_grad(f: impl Fn(&Image) -> f64, img: &Image, grad: &Image) {
        let h = 1e-3f32;
        for i in (0..img.data().len()).step_by(37) {
            let mut p = img.clone();
            p.data_mut()[i] += h;
            let mut m = img.clone();
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h as f64);
            let an = grad.data()[i] as f64;
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-3, "index {i}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn rgb_loss_values() {
        let a = pattern(16, 16, 3, 0.0);
        assert!(loss_rgb(&a, &a, 0.8).unwrap().value.abs() < 1e-12);
        let mut b = a.clone();
        b.data_mut().iter_mut().for_each(|v| *v += 0.1);
        let l1_only = loss_rgb(&a, &b, 1.0).unwrap().value;
        assert!((l1_only - 0.1).abs() < 1e-6);
    }

    #[test]
    fn rgb_gradient_matches_differences() {
        let a = pattern(16, 16, 3, 0.0);
        let b = pattern(16, 16, 3, 4.0);
        let lg = loss_rgb(&a, &b, 0.8).unwrap();
        check_grad(|x| loss_rgb(x, &b, 0.8).unwrap().value, &a, &lg.grad);
    }

    #[test]
    fn geo_loss_values_and_gradient() {
        let t = pattern(12, 10, 1, 1.0);
        assert!(loss_geo(&t, &t).unwrap().value.abs() < 1e-9);
        let affine = Image::from_fn(12, 10, 1, |c, r, px| px[0] = 2.5 * t.get(c, r, 0) + 0.7);
        assert!(loss_geo(&affine, &t).unwrap().value.abs() < 1e-6);
        let neg = Image::from_fn(12, 10, 1, |c, r, px| px[0] = -t.get(c, r, 0));
        assert!((loss_geo(&neg, &t).unwrap().value - 2.0).abs() < 1e-6);
        let flat = Image::filled(12, 10, 1, 3.0);
        let lf = loss_geo(&flat, &t).unwrap();
        assert_eq!(lf.value, 1.0);
        assert!(lf.grad.data().iter().all(|&g| g == 0.0));
        let d = pattern(12, 10, 1, 6.0);
        let lg = loss_geo(&d, &t).unwrap();
        check_grad(|x| loss_geo(x, &t).unwrap().value, &d, &lg.grad);
    }

    #[test]
    fn temporal_loss_and_gradient() {
        let a = pattern(8, 8, 3, 0.0);
        assert_eq!(loss_temporal(&a, &a).unwrap().value, 0.0);
        let b = pattern(8, 8, 3, 2.0);
        let lg = loss_temporal(&a, &b).unwrap();
        check_grad(|x| loss_temporal(x, &b).unwrap().value, &a, &lg.grad);
    }

    #[test]
    fn sem_loss_properties() {
        let ext = PyramidFeatures::default();
        let a = pattern(32, 32, 3, 0.0);
        let (l, ..) = loss_sem(&ext, &a, &a).unwrap();
        assert!(l.abs() < 1e-12);
        let b = pattern(32, 32, 3, 9.0);
        let (l1, ga, gb) = loss_sem(&ext, &a, &b).unwrap();
        let mut a2 = a.clone();
        a2.data_mut().iter_mut().for_each(|v| *v *= 1.7);
        // Block means scale with the image, so the cosine is unchanged.
        let (l2, ..) = loss_sem(&ext, &a2, &b).unwrap();
        assert!((l1 - l2).abs() < 1e-6);
        check_grad(|x| loss_sem(&ext, x, &b).unwrap().0, &a, &ga);
        check_grad(|x| loss_sem(&ext, &a, x).unwrap().0, &b, &gb);
    }

    #[test]
    fn half_occlusion_is_detected() {
        let ext = PyramidFeatures::default();
        let a = pattern(64, 64, 3, 0.0);
        let mut occluded = a.clone();
        for r in 0..64 {
            for c in 0..32 {
                occluded.pixel_mut(c, r).copy_from_slice(&[0.0, 0.0, 0.0]);
            }
        }
        let (l, ..) = loss_sem(&ext, &a, &occluded).unwrap();
        assert!(l > 0.05, "{l}");
    }
}
