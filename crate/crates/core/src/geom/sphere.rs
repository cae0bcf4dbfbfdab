use nalgebra::{Matrix3, Vector3};

use super::Direction;
use crate::error::{Error, Result};

/// A regular icosahedron inscribed in the unit sphere.
#[derive(Debug, Clone)]
pub struct Icosahedron {
    vertices: [Vector3<f64>; 12],
    faces: [[usize; 3]; 20],
}

impl Icosahedron {
    /// Vertices at the cyclic permutations of `(0, ±1, ±φ)`, normalized.
    pub fn standard() -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let raw = [
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ];
        let vertices = raw.map(|[x, y, z]| Vector3::new(x, y, z).normalize());
        let faces = [
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        Icosahedron { vertices, faces }
    }

    /// The same solid rotated by `rotation` (must be orthonormal).
    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Self {
        Icosahedron {
            vertices: self.vertices.map(|v| rotation * v),
            faces: self.faces,
        }
    }

    pub fn vertices(&self) -> &[Vector3<f64>; 12] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]; 20] {
        &self.faces
    }

    fn face_corners(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    /// Face centroids projected onto the sphere.
    pub fn face_centroids(&self) -> Vec<Direction> {
        (0..20)
            .map(|f| {
                let [a, b, c] = self.face_corners(f);
                Direction::from_vector(a + b + c).expect("nondegenerate face")
            })
            .collect()
    }
}

/// Points on the unit sphere obtained by sampling each icosahedron face
/// uniformly and projecting radially.
#[derive(Debug, Clone)]
pub struct SphereSampling {
    points: Vec<Direction>,
    face_id: Vec<u8>,
    per_face: usize,
}

impl SphereSampling {
    pub fn points(&self) -> &[Direction] {
        &self.points
    }

    pub fn face_id(&self) -> &[u8] {
        &self.face_id
    }

    pub fn per_face(&self) -> usize {
        self.per_face
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Samples `per_face` points on each face of the standard icosahedron.
pub fn icosphere_samples(per_face: usize) -> Result<SphereSampling> {
    sample_icosahedron(&Icosahedron::standard(), per_face)
}

/// Samples `per_face` points on each face of `ico`.
///
/// Each face is split into `n²` congruent sub-triangles and their centroids are
/// used; the centroid lattice continues seamlessly across face edges. When
/// `per_face` is not a perfect square, `n = ⌈√per_face⌉` and the centroids are
/// thinned with a uniform stride.
pub fn sample_icosahedron(ico: &Icosahedron, per_face: usize) -> Result<SphereSampling> {
    if per_face == 0 {
        return Err(Error::InvalidInput("per_face must be at least 1".into()));
    }
    let n = (per_face as f64).sqrt().ceil() as usize;
    let n = if (n - 1) * (n - 1) >= per_face { n - 1 } else { n };
    let lattice = centroid_barycentrics(n);
    let total = lattice.len();
    let picks: Vec<usize> = (0..per_face).map(|k| k * total / per_face).collect();

    let mut points = Vec::with_capacity(20 * per_face);
    let mut face_id = Vec::with_capacity(20 * per_face);
    for f in 0..20 {
        let [a, b, c] = ico.face_corners(f);
        for &k in &picks {
            let (s, t) = lattice[k];
            let p = a + (b - a) * s + (c - a) * t;
            points.push(Direction::from_vector(p).expect("face points are nonzero"));
            face_id.push(f as u8);
        }
    }
    Ok(SphereSampling {
        points,
        face_id,
        per_face,
    })
}

/// Barycentric `(s, t)` of the `n²` sub-triangle centroids, row by row with up
/// and down triangles interleaved.
fn centroid_barycentrics(n: usize) -> Vec<(f64, f64)> {
    let nf = 3.0 * n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n - i {
            out.push(((3 * i + 1) as f64 / nf, (3 * j + 1) as f64 / nf));
            if i + j + 2 <= n {
                out.push(((3 * i + 2) as f64 / nf, (3 * j + 2) as f64 / nf));
            }
        }
    }
    out
}
