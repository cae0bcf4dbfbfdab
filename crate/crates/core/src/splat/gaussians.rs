use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// One decoded Gaussian, used to build sets by hand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    /// `(w, x, y, z)`; need not be normalized.
    pub rotation: [f64; 4],
    /// Standard deviations along the local axes.
    pub scale: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Gaussian {
    pub fn isotropic(position: [f64; 3], sigma: f64, color: [f64; 3], opacity: f64) -> Self {
        Gaussian {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [sigma; 3],
            color,
            opacity,
        }
    }
}

/// Structure-of-arrays Gaussian parameters in their optimized encoding:
/// log scales and opacity logits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub colors: Vec<f64>,
    pub opacity_logits: Vec<f64>,
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GaussianSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gaussians(gs: &[Gaussian]) -> Result<Self> {
        let mut set = GaussianSet::new();
        for g in gs {
            set.push(g)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, g: &Gaussian) -> Result<()> {
        let qn = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(qn > 0.0) || g.scale.iter().any(|&s| !(s > 0.0)) || !(g.opacity > 0.0 && g.opacity < 1.0)
        {
            return Err(Error::InvalidInput(format!("invalid Gaussian {g:?}")));
        }
        self.positions.extend_from_slice(&g.position);
        self.rotations.extend(g.rotation.iter().map(|v| v / qn));
        self.log_scales.extend(g.scale.iter().map(|s| s.ln()));
        self.colors.extend_from_slice(&g.color);
        self.opacity_logits.push(logit(g.opacity));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.positions[3 * i],
            self.positions[3 * i + 1],
            self.positions[3 * i + 2],
        )
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        let s = &self.log_scales[3 * i..3 * i + 3];
        [s[0].exp(), s[1].exp(), s[2].exp()]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn color(&self, i: usize) -> [f64; 3] {
        let c = &self.colors[3 * i..3 * i + 3];
        [c[0], c[1], c[2]]
    }

    pub fn rotation(&self, i: usize) -> [f64; 4] {
        let q = &self.rotations[4 * i..4 * i + 4];
        [q[0], q[1], q[2], q[3]]
    }

    /// World-space covariance `R S² Rᵀ`.
    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        let r = rotation_matrix(&normalize_quat(self.rotation(i)));
        let s = self.scale(i);
        let m = r * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
        m * m.transpose()
    }

    /// Renormalizes every quaternion; degenerate ones reset to identity.
    pub fn normalize_rotations(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 && n.is_finite() {
                q.iter_mut().for_each(|v| *v /= n);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if self.positions.len() != 3 * n
            || self.rotations.len() != 4 * n
            || self.log_scales.len() != 3 * n
            || self.colors.len() != 3 * n
        {
            return Err(Error::DimensionMismatch("Gaussian parameter arrays disagree".into()));
        }
        let all = [
            &self.positions,
            &self.rotations,
            &self.log_scales,
            &self.colors,
            &self.opacity_logits,
        ];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("non-finite Gaussian parameter".into()));
        }
        Ok(())
    }

    /// Binary little-endian PLY; see [`PLY_PROPERTIES`].
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let bytes = self.ply_bytes();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn ply_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(256 + self.len() * PLY_PROPERTIES.len() * 8);
        out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
        out.extend_from_slice(format!("element vertex {}\n", self.len()).as_bytes());
        for p in PLY_PROPERTIES {
            out.extend_from_slice(format!("property double {p}\n").as_bytes());
        }
        out.extend_from_slice(b"end_header\n");
        for i in 0..self.len() {
            let row = self.positions[3 * i..3 * i + 3]
                .iter()
                .chain(&self.rotations[4 * i..4 * i + 4])
                .chain(&self.log_scales[3 * i..3 * i + 3])
                .chain(&self.colors[3 * i..3 * i + 3])
                .chain(std::iter::once(&self.opacity_logits[i]));
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn read_ply(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(f);
        let mut line = String::new();
        let mut next = |r: &mut BufReader<std::fs::File>| -> Result<String> {
            line.clear();
            let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::format(path, "truncated header"));
            }
            Ok(line.trim_end().to_string())
        };
        if next(&mut r)? != "ply" || next(&mut r)? != "format binary_little_endian 1.0" {
            return Err(Error::format(path, "not a binary little-endian PLY"));
        }
        let count: usize = next(&mut r)?
            .strip_prefix("element vertex ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "missing vertex count"))?;
        for p in PLY_PROPERTIES {
            if next(&mut r)? != format!("property double {p}") {
                return Err(Error::format(path, format!("expected property {p}")));
            }
        }
        if next(&mut r)? != "end_header" {
            return Err(Error::format(path, "unexpected header line"));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        let stride = PLY_PROPERTIES.len() * 8;
        if body.len() != count * stride {
            return Err(Error::format(
                path,
                format!("expected {} body bytes, found {}", count * stride, body.len()),
            ));
        }
        let mut set = GaussianSet::new();
        for row in body.chunks_exact(stride) {
            let v: Vec<f64> = row
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            set.positions.extend_from_slice(&v[0..3]);
            set.rotations.extend_from_slice(&v[3..7]);
            set.log_scales.extend_from_slice(&v[7..10]);
            set.colors.extend_from_slice(&v[10..13]);
            set.opacity_logits.push(v[13]);
        }
        set.check().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(set)
    }
}

/// PLY vertex properties in file order, all `double`. Scales are logs and
/// opacity is a logit.
pub const PLY_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "qw", "qx", "qy", "qz", "sx", "sy", "sz", "r", "g", "b", "opacity",
];

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient with respect to a unit quaternion of `Σ G_ij R_ij`.
pub(crate) fn rotation_matrix_vjp(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [gw, gx, gy, gz]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GaussianSet {
        GaussianSet::from_gaussians(&[
            Gaussian::isotropic([0.0, 2.0, 0.1], 0.2, [0.9, 0.1, 0.3], 0.7),
            Gaussian {
                position: [0.5, 3.0, -0.2],
                rotation: [0.9, 0.1, -0.3, 0.2],
                scale: [0.1, 0.3, 0.05],
                color: [0.2, 0.8, 0.4],
                opacity: 0.35,
            },
        ])
        .unwrap()
    }

    #[test]
    fn decode_roundtrips_push() {
        let s = sample();
        assert_eq!(s.len(), 2);
        assert!((s.opacity(1) - 0.35).abs() < 1e-12);
        assert!((s.scale(1)[1] - 0.3).abs() < 1e-12);
        let q = s.rotation(1);
        assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_matrix_is_orthonormal() {
        let r = rotation_matrix(&normalize_quat([0.3, -0.5, 0.7, 0.1]));
        assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_vjp_matches_differences() {
        let q = [0.6, -0.2, 0.5, 0.3];
        let g = Matrix3::new(0.3, -1.0, 0.2, 0.7, 0.1, -0.4, 0.5, 0.9, -0.6);
        let f = |q: &[f64; 4]| rotation_matrix(q).component_mul(&g).sum();
        let an = rotation_matrix_vjp(&q, &g);
        for k in 0..4 {
            let mut p = q;
            p[k] += 1e-6;
            let mut m = q;
            m[k] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - an[k]).abs() < 1e-6, "{k}: {fd} vs {}", an[k]);
        }
    }

    #[test]
    fn ply_file_roundtrip() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ply");
        s.write_ply(&path).unwrap();
        assert_eq!(GaussianSet::read_ply(&path).unwrap(), s);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(GaussianSet::read_ply(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_invalid_gaussians() {
        let mut g = Gaussian::isotropic([0.0; 3], 0.1, [0.5; 3], 1.0);
        assert!(GaussianSet::from_gaussians(&[g]).is_err());
        g.opacity = 0.5;
        g.scale[2] = 0.0;
        assert!(GaussianSet::from_gaussians(&[g]).is_err());
    }
}
