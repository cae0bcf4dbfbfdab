//! Pixel containers for panoramas, perspective views and latent grids, plus the
//! panorama ↔ perspective resampling operators.

mod io;
mod project;

pub use io::{
    mask_png_bytes, read_mask_png, read_rgb_png, rgb_png_bytes, write_gray16_png, write_mask_png,
    write_rgb_png,
};
pub use project::{
    project_perspective, sample_bilinear_clamped, sample_equirect, sample_equirect_into,
    splat_back, texel_direction, SplatBack,
};

use crate::error::{Error, Result};

/// Row-major `height × width × channels` grid of `f32` values.
///
/// Used for equirectangular panoramas, perspective views, masks, depth maps and
/// latent grids alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Equirectangular panorama (`width = 2·height`).
pub type EquirectImage = Image;
/// Pinhole view rendered from a panorama.
pub type PerspectiveImage = Image;

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{}×{}×{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from a per-pixel function.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f32]),
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for row in 0..height {
            for col in 0..width {
                f(col, row, img.pixel_mut(col, row));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, col: usize, row: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, col: usize, row: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn is_panorama(&self) -> bool {
        self.width == 2 * self.height && self.height > 0
    }

    pub fn ensure_panorama(&self) -> Result<()> {
        if self.is_panorama() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "panorama must be 2:1, got {}×{}",
                self.width, self.height
            )))
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("image contains non-finite values".into()))
        }
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    /// Extracts channels `start..start + count` into a new image.
    pub fn channel_range(&self, start: usize, count: usize) -> Image {
        assert!(start + count <= self.channels);
        let mut out = Image::new(self.width, self.height, count);
        for (dst, src) in out
            .data
            .chunks_exact_mut(count)
            .zip(self.data.chunks_exact(self.channels))
        {
            dst.copy_from_slice(&src[start..start + count]);
        }
        out
    }

    /// Nearest-neighbor resize, used for masks.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Image {
        Image::from_fn(width, height, self.channels, |c, r, px| {
            let sc = ((c as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            let sr = ((r as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            px.copy_from_slice(self.pixel(sc.min(self.width - 1), sr.min(self.height - 1)));
        })
    }

    /// Box-filter downsample by an integer factor.
    pub fn downsample_box(&self, factor: usize) -> Result<Image> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::DimensionMismatch(format!(
                "{}×{} is not divisible by {}",
                self.width, self.height, factor
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f32;
        Ok(Image::from_fn(w, h, self.channels, |c, r, px| {
            for dy in 0..factor {
                for dx in 0..factor {
                    let src = self.pixel(c * factor + dx, r * factor + dy);
                    for (p, s) in px.iter_mut().zip(src) {
                        *p += s * norm;
                    }
                }
            }
        }))
    }
}

/// An equirectangular video: `L ≥ 1` frames of identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoVideo {
    frames: Vec<EquirectImage>,
}

impl PanoVideo {
    pub fn new(frames: Vec<EquirectImage>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidInput("video needs at least one frame".into()))?;
        for f in &frames {
            first.same_dims(f)?;
        }
        Ok(PanoVideo { frames })
    }

    pub fn frames(&self) -> &[EquirectImage] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<EquirectImage> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, k: usize) -> &EquirectImage {
        &self.frames[k]
    }
}
