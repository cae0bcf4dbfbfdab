//! Spherical, equirectangular and perspective coordinate systems.
//!
//! Conventions used throughout the crate:
//! - a [`Direction`] is a unit vector; `+z` is up, the panorama center looks along `+y`;
//! - equirectangular coordinates `(u, v)` live in `[-1, 1]²`, `u` is azimuth
//!   (from `+y` towards `+x`), `v` is elevation;
//! - perspective cameras sit at the origin and use normalized plane coordinates
//!   `(x, y)` in `[-1, 1]²`.

mod camera;
mod direction;
mod index;
mod sphere;

pub use camera::{
    camera_fan, camera_ray, dir_to_pixel, plane_size_for_fov, project_unbounded, Camera,
    DEFAULT_FOCAL,
};
pub use direction::{dir_to_equirect, equirect_to_dir, Direction};
pub use index::{chord_to_angle, SphereIndex};
pub use sphere::{icosphere_samples, sample_icosahedron, Icosahedron, SphereSampling};
