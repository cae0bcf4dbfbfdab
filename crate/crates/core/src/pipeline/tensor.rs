//! The `P4DT` raw tensor file format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "P4DT"
//! 4       2           version (u16 LE, currently 1)
//! 6       1           dtype code (1 = f32)
//! 7       1           rank
//! 8       4·rank      dims (u32 LE each)
//! ...     4·∏dims     payload, f32 LE, row-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const MAGIC: &[u8; 4] = b"P4DT";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

/// A dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::InvalidInput(format!("unrepresentable dims {dims:?}")));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `height × width × channels` tensor from an image.
    pub fn from_image(img: &Image) -> Self {
        Tensor {
            dims: vec![img.height(), img.width(), img.channels()],
            data: img.data().to_vec(),
        }
    }

    /// Interprets a rank-2 (`h × w`) or rank-3 (`h × w × c`) tensor as an image.
    pub fn into_image(self) -> Result<Image> {
        match *self.dims.as_slice() {
            [h, w] => Image::from_data(w, h, 1, self.data),
            [h, w, c] => Image::from_data(w, h, c, self.data),
            _ => Err(Error::DimensionMismatch(format!(
                "expected rank 2 or 3 tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 {
            return Err(format!("file too short ({} bytes)", bytes.len()));
        }
        if &bytes[0..4] != MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        if bytes[6] != DTYPE_F32 {
            return Err(format!("unsupported dtype code {}", bytes[6]));
        }
        let rank = bytes[7] as usize;
        let header = 8 + 4 * rank;
        if bytes.len() < header {
            return Err("truncated dims".into());
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .collect();
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("dims overflow")?;
        let expected = n.checked_mul(4).and_then(|p| p.checked_add(header)).ok_or("dims overflow")?;
        if bytes.len() != expected {
            return Err(format!(
                "payload length mismatch: expected {expected} bytes, got {}",
                bytes.len()
            ));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Tensor { dims, data })
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    std::fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes).map_err(|m| Error::format(path, m))
}
