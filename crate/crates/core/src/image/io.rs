use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::Image;
use crate::error::{Error, Result};

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8-bit PNG as RGB in `[0, 1]`.
pub fn read_rgb_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| codec_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    Image::from_data(w as usize, h as usize, 3, data)
}

fn rgb_buffer(img: &Image) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    if img.channels() < 3 {
        return Err(Error::DimensionMismatch(format!(
            "RGB output needs 3 channels, got {}",
            img.channels()
        )));
    }
    let raw: Vec<u8> = img
        .data()
        .chunks_exact(img.channels())
        .flat_map(|px| [to_u8(px[0]), to_u8(px[1]), to_u8(px[2])])
        .collect();
    Ok(ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer size matches"))
}

fn mask_buffer(mask: &Image) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let raw: Vec<u16> = mask
        .data()
        .iter()
        .step_by(mask.channels())
        .map(|&v| if v >= 0.5 { u16::MAX } else { 0 })
        .collect();
    ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer size matches")
}

fn png_bytes<P, C>(buf: &ImageBuffer<P, C>) -> Result<Vec<u8>>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| codec_err(Path::new("<memory>"), e))?;
    Ok(out.into_inner())
}

/// Writes the first three channels of `img` as an 8-bit RGB PNG.
pub fn write_rgb_png(img: &Image, path: &Path) -> Result<()> {
    rgb_buffer(img)?.save(path).map_err(|e| codec_err(path, e))
}

/// In-memory 8-bit RGB PNG encoding of the first three channels.
pub fn rgb_png_bytes(img: &Image) -> Result<Vec<u8>> {
    png_bytes(&rgb_buffer(img)?)
}

/// In-memory 16-bit mask PNG encoding, as written by [`write_mask_png`].
pub fn mask_png_bytes(mask: &Image) -> Result<Vec<u8>> {
    png_bytes(&mask_buffer(mask))
}

/// Reads a grayscale mask; values at or above half range become 1, others 0.
pub fn read_mask_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| codec_err(path, e))?.to_luma16();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| if v >= 32768 { 1.0 } else { 0.0 })
        .collect();
    Image::from_data(w as usize, h as usize, 1, data)
}

/// Writes a binary mask as a 16-bit grayscale PNG (0 or 65535).
pub fn write_mask_png(mask: &Image, path: &Path) -> Result<()> {
    mask_buffer(mask).save(path).map_err(|e| codec_err(path, e))
}

/// Writes a single-channel image as 16-bit grayscale, mapping `[lo, hi]` to the full range.
pub fn write_gray16_png(img: &Image, lo: f32, hi: f32, path: &Path) -> Result<()> {
    let span = (hi - lo).max(f32::MIN_POSITIVE);
    let raw: Vec<u16> = img
        .data()
        .iter()
        .step_by(img.channels())
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    save_gray16(img.width(), img.height(), raw, path)
}

fn save_gray16(w: usize, h: usize, raw: Vec<u16>, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer size matches");
    buf.save(path).map_err(|e| codec_err(path, e))
}
