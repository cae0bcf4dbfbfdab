//! Image and video quality metrics.

mod ssim;

pub use ssim::{ssim, ssim_with_grad, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{camera_ray, dir_to_pixel, Camera};
use crate::image::{sample_bilinear_clamped, Image};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    if a.data().is_empty() {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

/// Mean over consecutive frame pairs of the mean absolute difference.
pub fn flicker(frames: &[Image]) -> Result<f64> {
    if frames.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for pair in frames.windows(2) {
        pair[0].same_dims(&pair[1])?;
        let s: f64 = pair[0]
            .data()
            .iter()
            .zip(pair[1].data())
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        total += s / pair[0].data().len() as f64;
    }
    Ok(total / (frames.len() - 1) as f64)
}

/// Disagreement between two views on their shared field of view.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PairRms {
    pub a: usize,
    pub b: usize,
    /// Number of overlapping pixels of view `a` compared (per frame).
    pub samples: usize,
    pub rms: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OverlapReport {
    pub pairs: Vec<PairRms>,
    /// RMS over all pairs, weighting every compared sample equally.
    pub pooled_rms: f64,
    pub max_rms: f64,
}

/// RMS difference of perspective videos on every pair of overlapping frusta.
///
/// For each pair `(a, b)` with `a < b`, every pixel center of view `a` whose
/// ray falls inside view `b` is compared against a bilinear read of view `b`,
/// over all frames and channels.
pub fn overlap_consistency(videos: &[Vec<Image>], cams: &[Camera]) -> Result<OverlapReport> {
    if videos.len() != cams.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} videos for {} cameras",
            videos.len(),
            cams.len()
        )));
    }
    let frames = videos.first().map_or(0, |v| v.len());
    for (v, cam) in videos.iter().zip(cams) {
        if v.len() != frames {
            return Err(Error::DimensionMismatch("videos differ in length".into()));
        }
        for f in v {
            if f.width() != cam.res_w() || f.height() != cam.res_h() {
                return Err(Error::DimensionMismatch(
                    "frame does not match its camera resolution".into(),
                ));
            }
        }
    }
    let mut pairs = Vec::new();
    let (mut total_sq, mut total_n) = (0.0f64, 0usize);
    for a in 0..cams.len() {
        for b in a + 1..cams.len() {
            let (ca, cb) = (&cams[a], &cams[b]);
            let mut hits = Vec::new();
            for row in 0..ca.res_h() {
                for col in 0..ca.res_w() {
                    let (x, y) = ca.pixel_center(col, row);
                    if let Some((xb, yb)) = dir_to_pixel(cb, &camera_ray(ca, x, y)) {
                        hits.push((col, row, cb.plane_to_pixel(xb, yb)));
                    }
                }
            }
            if hits.is_empty() {
                continue;
            }
            let mut sq = 0.0f64;
            let mut n = 0usize;
            for k in 0..frames {
                let (fa, fb) = (&videos[a][k], &videos[b][k]);
                if fa.channels() != fb.channels() {
                    return Err(Error::DimensionMismatch("views differ in channels".into()));
                }
                let mut buf = vec![0.0f32; fb.channels()];
                for &(col, row, (px, py)) in &hits {
                    sample_bilinear_clamped(fb, px, py, &mut buf);
                    for (va, vb) in fa.pixel(col, row).iter().zip(&buf) {
                        let d = *va as f64 - *vb as f64;
                        sq += d * d;
                        n += 1;
                    }
                }
            }
            total_sq += sq;
            total_n += n;
            pairs.push(PairRms {
                a,
                b,
                samples: hits.len(),
                rms: if n > 0 { (sq / n as f64).sqrt() } else { 0.0 },
            });
        }
    }
    let pooled_rms = if total_n > 0 {
        (total_sq / total_n as f64).sqrt()
    } else {
        0.0
    };
    let max_rms = pairs.iter().map(|p| p.rms).fold(0.0, f64::max);
    Ok(OverlapReport {
        pairs,
        pooled_rms,
        max_rms,
    })
}

/// Metrics written by the `eval` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub frames: usize,
    /// Mean PSNR over frames, dB.
    pub psnr: f64,
    pub psnr_per_frame: Vec<f64>,
    pub ssim: f64,
    /// Flicker of the candidate and reference sequences.
    pub flicker: f64,
    pub flicker_reference: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapReport>,
}

/// Compares a candidate frame sequence against a reference.
pub fn compare_videos(candidate: &[Image], reference: &[Image]) -> Result<MetricsReport> {
    if candidate.len() != reference.len() || candidate.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "frame counts differ or are zero: {} vs {}",
            candidate.len(),
            reference.len()
        )));
    }
    let psnr_per_frame = candidate
        .iter()
        .zip(reference)
        .map(|(a, b)| psnr(a, b))
        .collect::<Result<Vec<_>>>()?;
    let ssims = candidate
        .iter()
        .zip(reference)
        .map(|(a, b)| ssim(a, b))
        .collect::<Result<Vec<_>>>()?;
    let n = candidate.len() as f64;
    Ok(MetricsReport {
        frames: candidate.len(),
        psnr: psnr_per_frame.iter().sum::<f64>() / n,
        psnr_per_frame,
        ssim: ssims.iter().sum::<f64>() / n,
        flicker: flicker(candidate)?,
        flicker_reference: flicker(reference)?,
        overlap: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::camera_fan;
    use crate::image::project_perspective;

    fn ramp() -> Image {
        Image::from_fn(24, 16, 3, |c, r, px| {
            px[0] = c as f32 / 24.0;
            px[1] = r as f32 / 16.0;
            px[2] = 0.3;
        })
    }

    #[test]
    fn psnr_cap_and_analytic_value() {
        let a = ramp();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::from_data(24, 16, 3, a.data().iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Image::new(3, 3, 3)).is_err());
    }

    #[test]
    fn flicker_values() {
        let a = ramp();
        assert_eq!(flicker(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
        let b = Image::from_data(24, 16, 3, a.data().iter().map(|v| v + 0.25).collect()).unwrap();
        assert!((flicker(&[a.clone(), b]).unwrap() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn projections_of_one_panorama_are_consistent() {
        let pano = Image::from_fn(256, 128, 1, |c, r, px| {
            let d = crate::image::texel_direction(256, 128, c, r);
            px[0] = (0.5 + 0.3 * d.x() + 0.1 * d.z()) as f32;
        });
        let cams = camera_fan(80.0, 24).unwrap();
        let videos: Vec<Vec<Image>> = cams
            .iter()
            .map(|c| vec![project_perspective(&pano, c)])
            .collect();
        let rep = overlap_consistency(&videos, &cams).unwrap();
        assert!(!rep.pairs.is_empty());
        assert!(rep.max_rms < 2e-3, "max {}", rep.max_rms);
        let mut shifted = videos.clone();
        for v in shifted[0][0].data_mut() {
            *v += 0.1;
        }
        let bad = overlap_consistency(&shifted, &cams).unwrap();
        assert!(bad.max_rms > 0.09);
    }
}
