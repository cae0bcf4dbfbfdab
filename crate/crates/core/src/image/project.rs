use rayon::prelude::*;

use super::Image;
use crate::error::{Error, Result};
use crate::geom::{camera_ray, dir_to_equirect, dir_to_pixel, equirect_to_dir, Camera, Direction};

/// Texels above this |v| copy the nearest row below it in [`splat_back`].
const POLE_V: f64 = 0.999;

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Direction through the center of equirect texel `(col, row)`.
pub fn texel_direction(width: usize, height: usize, col: usize, row: usize) -> Direction {
    let u = -1.0 + (2 * col + 1) as f64 / width as f64;
    let v = 1.0 - (2 * row + 1) as f64 / height as f64;
    equirect_to_dir(u, v)
}

/// Bilinear sample of a panorama along `d`, written into `out`.
///
/// Wraps horizontally across the seam and clamps vertically at the poles.
pub fn sample_equirect_into(img: &Image, d: &Direction, out: &mut [f32]) {
    let (u, v) = dir_to_equirect(d);
    let w = img.width();
    let h = img.height();
    let col = (u + 1.0) * 0.5 * w as f64 - 0.5;
    let row = ((1.0 - v) * 0.5 * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let c0f = col.floor();
    let fx = (col - c0f) as f32;
    let c0 = (c0f as i64).rem_euclid(w as i64) as usize;
    let c1 = (c0 + 1) % w;
    let r0 = row.floor() as usize;
    let r1 = (r0 + 1).min(h - 1);
    let fy = (row - r0 as f64) as f32;
    let (p00, p01, p10, p11) = (
        img.pixel(c0, r0),
        img.pixel(c1, r0),
        img.pixel(c0, r1),
        img.pixel(c1, r1),
    );
    for ch in 0..img.channels() {
        let top = lerp(p00[ch], p01[ch], fx);
        let bottom = lerp(p10[ch], p11[ch], fx);
        out[ch] = lerp(top, bottom, fy);
    }
}

pub fn sample_equirect(img: &Image, d: &Direction) -> Vec<f32> {
    let mut out = vec![0.0; img.channels()];
    sample_equirect_into(img, d, &mut out);
    out
}

/// Bilinear read at continuous pixel coordinates, clamped to the image border.
pub fn sample_bilinear_clamped(img: &Image, px: f64, py: f64, out: &mut [f32]) {
    let x = px.clamp(0.0, (img.width() - 1) as f64);
    let y = py.clamp(0.0, (img.height() - 1) as f64);
    let c0 = x.floor() as usize;
    let r0 = y.floor() as usize;
    let c1 = (c0 + 1).min(img.width() - 1);
    let r1 = (r0 + 1).min(img.height() - 1);
    let fx = (x - c0 as f64) as f32;
    let fy = (y - r0 as f64) as f32;
    let (p00, p01, p10, p11) = (
        img.pixel(c0, r0),
        img.pixel(c1, r0),
        img.pixel(c0, r1),
        img.pixel(c1, r1),
    );
    for ch in 0..img.channels() {
        let top = lerp(p00[ch], p01[ch], fx);
        let bottom = lerp(p10[ch], p11[ch], fx);
        out[ch] = lerp(top, bottom, fy);
    }
}

/// Renders the perspective view of `img` seen by `cam` (the operator γ).
pub fn project_perspective(img: &Image, cam: &Camera) -> Image {
    let (w, h, c) = (cam.res_w(), cam.res_h(), img.channels());
    let mut out = Image::new(w, h, c);
    out.data_mut()
        .par_chunks_mut(w * c)
        .enumerate()
        .for_each(|(row, line)| {
            for col in 0..w {
                let (x, y) = cam.pixel_center(col, row);
                let d = camera_ray(cam, x, y);
                sample_equirect_into(img, &d, &mut line[col * c..(col + 1) * c]);
            }
        });
    out
}

/// Result of [`splat_back`]: the merged panorama and per-texel view counts.
#[derive(Debug, Clone)]
pub struct SplatBack {
    pub image: Image,
    /// Number of views covering each texel; 0 marks an uncovered texel.
    pub weights: Vec<f32>,
}

impl SplatBack {
    pub fn uncovered(&self) -> usize {
        self.weights.iter().filter(|&&w| w == 0.0).count()
    }
}

/// Merges perspective views back into an equirectangular panorama.
///
/// Every texel averages bilinear reads from each view whose frustum contains
/// its direction. Views are visited in slice order, so the sum is
/// deterministic. Rows with |v| > 0.999 copy the nearest row below that limit.
pub fn splat_back(views: &[(&Image, &Camera)], width: usize, height: usize) -> Result<SplatBack> {
    let (first, _) = views
        .first()
        .ok_or_else(|| Error::InvalidInput("splat_back needs at least one view".into()))?;
    let c = first.channels();
    for (img, cam) in views {
        if img.channels() != c || img.width() != cam.res_w() || img.height() != cam.res_h() {
            return Err(Error::DimensionMismatch(
                "view image does not match its camera or channel count".into(),
            ));
        }
    }
    let mut image = Image::new(width, height, c);
    let mut weights = vec![0.0f32; width * height];
    image
        .data_mut()
        .par_chunks_mut(width * c)
        .zip(weights.par_chunks_mut(width))
        .enumerate()
        .for_each(|(row, (line, wline))| {
            let mut sample = vec![0.0f32; c];
            for col in 0..width {
                let d = texel_direction(width, height, col, row);
                let acc = &mut line[col * c..(col + 1) * c];
                let mut count = 0u32;
                for (img, cam) in views {
                    if let Some((x, y)) = dir_to_pixel(cam, &d) {
                        let (px, py) = cam.plane_to_pixel(x, y);
                        sample_bilinear_clamped(img, px, py, &mut sample);
                        for (a, s) in acc.iter_mut().zip(&sample) {
                            *a += s;
                        }
                        count += 1;
                    }
                }
                if count > 0 {
                    let inv = count as f32;
                    for a in acc.iter_mut() {
                        *a /= inv;
                    }
                }
                wline[col] = count as f32;
            }
        });
    fill_pole_rows(&mut image, &mut weights);
    Ok(SplatBack { image, weights })
}

fn fill_pole_rows(image: &mut Image, weights: &mut [f32]) {
    let (w, h, c) = image.dims();
    let row_v = |r: usize| 1.0 - (2 * r + 1) as f64 / h as f64;
    let valid: Vec<usize> = (0..h).filter(|&r| row_v(r).abs() <= POLE_V).collect();
    if valid.is_empty() {
        return;
    }
    for r in 0..h {
        if row_v(r).abs() <= POLE_V {
            continue;
        }
        let src = *valid
            .iter()
            .min_by_key(|&&s| (s as i64 - r as i64).unsigned_abs())
            .expect("nonempty");
        let (lo, hi) = (src * w * c, (src + 1) * w * c);
        let row_copy = image.data()[lo..hi].to_vec();
        image.data_mut()[r * w * c..(r + 1) * w * c].copy_from_slice(&row_copy);
        let wcopy = weights[src * w..(src + 1) * w].to_vec();
        weights[r * w..(r + 1) * w].copy_from_slice(&wcopy);
    }
}
