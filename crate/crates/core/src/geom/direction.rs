use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;

/// A unit vector on the sphere; the coordinate used for every ray and view axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    /// Normalizes `(x, y, z)`. Returns `None` for the zero vector or non-finite input.
    pub fn new(x: f64, y: f64, z: f64) -> Option<Self> {
        Self::from_vector(Vector3::new(x, y, z))
    }

    pub fn from_vector(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n > 0.0 && n.is_finite() {
            Some(Direction(v / n))
        } else {
            None
        }
    }

    /// Wraps a vector that is already unit length (checked in debug builds).
    pub fn from_unit(v: Vector3<f64>) -> Self {
        debug_assert!((v.norm() - 1.0).abs() < 1e-6, "not unit: {v:?}");
        Direction(v)
    }

    pub const fn unit_x() -> Self {
        Direction(Vector3::new(1.0, 0.0, 0.0))
    }

    pub const fn unit_y() -> Self {
        Direction(Vector3::new(0.0, 1.0, 0.0))
    }

    pub const fn unit_z() -> Self {
        Direction(Vector3::new(0.0, 0.0, 1.0))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.0.dot(&other.0)
    }

    /// Great-circle angle to `other`, in radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        // atan2 form stays accurate for both tiny and near-antipodal angles.
        let cross = self.0.cross(&other.0).norm();
        cross.atan2(self.0.dot(&other.0))
    }
}

impl std::ops::Neg for Direction {
    type Output = Direction;

    fn neg(self) -> Direction {
        Direction(-self.0)
    }
}

/// Maps a direction to normalized equirectangular coordinates `(u, v)` in `[-1, 1]²`.
///
/// `v = (2/π)·asin z` is the elevation. `u` is the azimuth measured from `+y`
/// towards `+x`, scaled by `1/π`; on the `x ≥ 0` hemisphere it equals
/// `(1/π)·acos(y/√(1−z²))`, and on `x < 0` it takes the negative sign so the
/// mapping covers the full sphere. The antimeridian maps to `u = +1` and the
/// poles to `u = 0`.
pub fn dir_to_equirect(d: &Direction) -> (f64, f64) {
    let (x, y, z) = (d.x(), d.y(), d.z());
    let v = z.clamp(-1.0, 1.0).asin() / FRAC_PI_2;
    let horizontal = x.hypot(y);
    if horizontal == 0.0 {
        return (0.0, v);
    }
    // +0.0 normalizes the sign of a negative zero so the seam lands on +1.
    let azimuth = (x + 0.0).atan2(y);
    let mut u = azimuth / PI;
    if u <= -1.0 {
        u = 1.0;
    }
    (u, v)
}

/// Inverse of [`dir_to_equirect`].
pub fn equirect_to_dir(u: f64, v: f64) -> Direction {
    let lon = u * PI;
    let lat = v * FRAC_PI_2;
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    Direction::from_unit(Vector3::new(cl * so, cl * co, sl))
}
