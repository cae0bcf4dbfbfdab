use nalgebra::Vector3;

use super::{sphere::Icosahedron, Direction};
use crate::error::{Error, Result};

/// Focal length used by every shipped camera, in image-plane units.
pub const DEFAULT_FOCAL: f64 = 0.6;

/// Axes closer than this to world ±z need an explicit up vector.
const POLE_TOLERANCE: f64 = 1e-6;

/// Pinhole camera centered at the origin, looking along `axis`.
///
/// Normalized image-plane coordinates `(x, y)` span `[-1, 1]²`, with `x`
/// increasing to the right and `y` increasing upwards. Pixel `(col, row)` has
/// its center at `x = 2(col + ½)/res_w − 1`, `y = 1 − 2(row + ½)/res_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    axis: Direction,
    right: Vector3<f64>,
    up: Vector3<f64>,
    focal: f64,
    plane_size: (f64, f64),
    roll: f64,
    res_w: usize,
    res_h: usize,
}

impl Camera {
    /// Builds a camera whose up-vector lies in the plane spanned by `axis` and world z.
    pub fn new(
        axis: Direction,
        focal: f64,
        plane_size: (f64, f64),
        res_w: usize,
        res_h: usize,
    ) -> Result<Self> {
        if 1.0 - axis.z().abs() < POLE_TOLERANCE {
            return Err(Error::InvalidCamera(format!(
                "axis {:?} is parallel to world z; supply an explicit up vector",
                axis.as_vector()
            )));
        }
        Self::with_up(axis, Direction::unit_z(), focal, plane_size, res_w, res_h)
    }

    /// Builds a camera with an explicit up hint, which is orthogonalized against the axis.
    pub fn with_up(
        axis: Direction,
        up_hint: Direction,
        focal: f64,
        plane_size: (f64, f64),
        res_w: usize,
        res_h: usize,
    ) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::InvalidCamera(format!("focal must be > 0, got {focal}")));
        }
        if !(plane_size.0 > 0.0 && plane_size.1 > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "plane size must be positive, got {plane_size:?}"
            )));
        }
        if res_w == 0 || res_h == 0 {
            return Err(Error::InvalidCamera("resolution must be nonzero".into()));
        }
        let a = *axis.as_vector();
        let h = *up_hint.as_vector();
        let up = h - a * a.dot(&h);
        let n = up.norm();
        if n < POLE_TOLERANCE {
            return Err(Error::InvalidCamera("up hint is parallel to the axis".into()));
        }
        let up = up / n;
        let right = a.cross(&up);
        Ok(Camera {
            axis,
            right,
            up,
            focal,
            plane_size,
            roll: 0.0,
            res_w,
            res_h,
        })
    }

    /// Square camera with the default focal length and the given horizontal FOV.
    pub fn from_fov(axis: Direction, fov_deg: f64, res: usize) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::InvalidCamera(format!("fov must be in (0, 180), got {fov_deg}")));
        }
        let s = plane_size_for_fov(DEFAULT_FOCAL, fov_deg);
        Self::new(axis, DEFAULT_FOCAL, (s, s), res, res)
    }

    /// Rotates the image plane about the axis by `roll` radians.
    pub fn with_roll(mut self, roll: f64) -> Self {
        let delta = roll - self.roll;
        let (s, c) = delta.sin_cos();
        let right = self.right * c + self.up * s;
        let up = self.up * c - self.right * s;
        self.right = right;
        self.up = up;
        self.roll = roll;
        self
    }

    /// Same orientation and intrinsics at a different resolution.
    pub fn with_resolution(&self, res_w: usize, res_h: usize) -> Self {
        Camera {
            res_w,
            res_h,
            ..self.clone()
        }
    }

    pub fn axis(&self) -> Direction {
        self.axis
    }

    pub fn right(&self) -> &Vector3<f64> {
        &self.right
    }

    pub fn up(&self) -> &Vector3<f64> {
        &self.up
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn plane_size(&self) -> (f64, f64) {
        self.plane_size
    }

    pub fn roll(&self) -> f64 {
        self.roll
    }

    pub fn res_w(&self) -> usize {
        self.res_w
    }

    pub fn res_h(&self) -> usize {
        self.res_h
    }

    /// Horizontal field of view in degrees.
    pub fn fov_x_deg(&self) -> f64 {
        2.0 * (self.plane_size.0 / 2.0 / self.focal).atan().to_degrees()
    }

    /// Focal lengths in pixels `(fx, fy)`.
    pub fn focal_pixels(&self) -> (f64, f64) {
        (
            self.focal * self.res_w as f64 / self.plane_size.0,
            self.focal * self.res_h as f64 / self.plane_size.1,
        )
    }

    /// Principal point in pixel coordinates (pixel centers at integer + ½ offsets).
    pub fn principal_point(&self) -> (f64, f64) {
        (self.res_w as f64 / 2.0 - 0.5, self.res_h as f64 / 2.0 - 0.5)
    }

    /// Normalized plane coordinates of the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            2.0 * (col as f64 + 0.5) / self.res_w as f64 - 1.0,
            1.0 - 2.0 * (row as f64 + 0.5) / self.res_h as f64,
        )
    }

    /// Continuous pixel coordinates for normalized plane coordinates.
    pub fn plane_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x + 1.0) * 0.5 * self.res_w as f64 - 0.5,
            (1.0 - y) * 0.5 * self.res_h as f64 - 0.5,
        )
    }

    /// Unnormalized ray through plane coordinates `(x, y)`.
    pub fn ray_vector(&self, x: f64, y: f64) -> Vector3<f64> {
        self.axis.as_vector() * self.focal
            + self.right * (x * self.plane_size.0 * 0.5)
            + self.up * (y * self.plane_size.1 * 0.5)
    }
}

/// Image-plane size that yields `fov_deg` at focal length `focal`.
pub fn plane_size_for_fov(focal: f64, fov_deg: f64) -> f64 {
    2.0 * focal * (fov_deg.to_radians() / 2.0).tan()
}

/// Unit ray through normalized plane coordinates `(x, y)`.
pub fn camera_ray(cam: &Camera, x: f64, y: f64) -> Direction {
    Direction::from_unit(cam.ray_vector(x, y).normalize())
}

/// Normalized plane coordinates of `d`, or `None` outside the frustum.
pub fn dir_to_pixel(cam: &Camera, d: &Direction) -> Option<(f64, f64)> {
    let (x, y) = project_unbounded(cam, d)?;
    if x.abs() <= 1.0 && y.abs() <= 1.0 {
        Some((x, y))
    } else {
        None
    }
}

/// Plane coordinates of `d` for any direction in front of the camera.
pub fn project_unbounded(cam: &Camera, d: &Direction) -> Option<(f64, f64)> {
    let v = d.as_vector();
    let depth = v.dot(cam.axis.as_vector());
    if depth <= 0.0 {
        return None;
    }
    let x = v.dot(&cam.right) / depth * cam.focal / (cam.plane_size.0 * 0.5);
    let y = v.dot(&cam.up) / depth * cam.focal / (cam.plane_size.1 * 0.5);
    Some((x, y))
}

/// The 20 cameras looking at the icosahedron face centroids.
pub fn camera_fan(fov_deg: f64, res: usize) -> Result<Vec<Camera>> {
    Icosahedron::standard()
        .face_centroids()
        .into_iter()
        .map(|axis| Camera::from_fov(axis, fov_deg, res))
        .collect()
}
