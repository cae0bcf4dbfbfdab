use crate::error::{Error, Result};
use crate::image::Image;

/// Maps images to latent grids and back.
///
/// `encode` turns an `H × W × 3` image into an `H/d × W/d × c` latent grid, where
/// `d` is [`Codec::downsample`] and `c` is [`Codec::latent_channels`].
pub trait Codec: Send + Sync {
    fn downsample(&self) -> usize;

    fn latent_channels(&self) -> usize;

    fn encode(&self, img: &Image) -> Result<Image>;

    /// Decodes one frame of a grid holding `L·c` channels (frame-major).
    fn decode(&self, latent: &Image, frame: usize) -> Result<Image> {
        let c = self.latent_channels();
        if latent.channels() < (frame + 1) * c {
            return Err(Error::DimensionMismatch(format!(
                "latent grid has {} channels, frame {frame} needs {}",
                latent.channels(),
                (frame + 1) * c
            )));
        }
        self.decode_frame(&latent.channel_range(frame * c, c))
    }

    /// Decodes a single-frame latent grid with exactly `c` channels.
    fn decode_frame(&self, latent: &Image) -> Result<Image>;
}

/// Pass-through codec: the latent grid is the image itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn downsample(&self) -> usize {
        1
    }

    fn latent_channels(&self) -> usize {
        3
    }

    fn encode(&self, img: &Image) -> Result<Image> {
        if img.channels() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "identity codec expects 3 channels, got {}",
                img.channels()
            )));
        }
        Ok(img.clone())
    }

    fn decode_frame(&self, latent: &Image) -> Result<Image> {
        Ok(latent.clone())
    }
}

/// Box-filter downsampling encoder with nearest-texel upsampling decoder.
#[derive(Debug, Clone, Copy)]
pub struct PoolCodec {
    pub factor: usize,
}

impl Codec for PoolCodec {
    fn downsample(&self) -> usize {
        self.factor
    }

    fn latent_channels(&self) -> usize {
        3
    }

    fn encode(&self, img: &Image) -> Result<Image> {
        img.downsample_box(self.factor)
    }

    fn decode_frame(&self, latent: &Image) -> Result<Image> {
        Ok(latent.resize_nearest(latent.width() * self.factor, latent.height() * self.factor))
    }
}
