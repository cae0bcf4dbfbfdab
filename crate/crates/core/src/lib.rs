#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod animator;
pub mod error;
pub mod eval;
pub mod geom;
pub mod image;
pub mod lift;
pub mod optim;
pub mod pipeline;
pub mod splat;

pub use error::{Error, Result};
pub use nalgebra;
