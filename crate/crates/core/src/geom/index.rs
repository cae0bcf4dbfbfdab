use super::{Direction, SphereSampling};

/// Nearest-neighbor queries over points on the unit sphere.
///
/// Points are bucketed into a uniform 3D grid; only cells touched by the sphere
/// are stored, as a sorted key table.
#[derive(Debug, Clone)]
pub struct SphereIndex {
    cell: f64,
    keys: Vec<(u64, u32, u32)>,
    order: Vec<u32>,
    points: Vec<[f64; 3]>,
    mean_spacing: f64,
}

const KEY_BIAS: i64 = 1 << 20;

fn cell_key(ix: i64, iy: i64, iz: i64) -> u64 {
    (((ix + KEY_BIAS) as u64) << 42) | (((iy + KEY_BIAS) as u64) << 21) | ((iz + KEY_BIAS) as u64)
}

/// Chord length to great-circle angle.
pub fn chord_to_angle(chord: f64) -> f64 {
    2.0 * (chord * 0.5).min(1.0).asin()
}

impl SphereIndex {
    pub fn new(sampling: &SphereSampling) -> Self {
        Self::from_points(sampling.points())
    }

    pub fn from_points(dirs: &[Direction]) -> Self {
        assert!(!dirs.is_empty(), "cannot index an empty point set");
        let n = dirs.len();
        let nominal = (4.0 * std::f64::consts::PI / n as f64).sqrt();
        let cell = (2.0 * nominal).min(2.0);
        let points: Vec<[f64; 3]> = dirs.iter().map(|d| [d.x(), d.y(), d.z()]).collect();
        let mut keyed: Vec<(u64, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let [ix, iy, iz] = p.map(|c| (c / cell).floor() as i64);
                (cell_key(ix, iy, iz), i as u32)
            })
            .collect();
        keyed.sort_unstable();
        let order: Vec<u32> = keyed.iter().map(|&(_, i)| i).collect();
        let mut keys = Vec::new();
        let mut start = 0usize;
        while start < keyed.len() {
            let k = keyed[start].0;
            let mut end = start;
            while end < keyed.len() && keyed[end].0 == k {
                end += 1;
            }
            keys.push((k, start as u32, end as u32));
            start = end;
        }
        let mut index = SphereIndex {
            cell,
            keys,
            order,
            points,
            mean_spacing: 0.0,
        };
        index.mean_spacing = index.estimate_mean_spacing();
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean great-circle distance from a point to its nearest neighbor, estimated
    /// over a deterministic strided subset of at most 20 000 points.
    pub fn mean_spacing(&self) -> f64 {
        self.mean_spacing
    }

    fn estimate_mean_spacing(&self) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return std::f64::consts::PI;
        }
        let stride = n.div_ceil(20_000).max(1);
        let mut total = 0.0;
        let mut count = 0usize;
        for i in (0..n).step_by(stride) {
            let mut best = [(f64::INFINITY, u32::MAX); 2];
            self.knn_raw(self.points[i], &mut best);
            // best[0] is the point itself
            let d = if best[0].1 as usize == i { best[1].0 } else { best[0].0 };
            total += chord_to_angle(d);
            count += 1;
        }
        total / count as f64
    }

    fn cell_range(&self, key: u64) -> Option<&[u32]> {
        self.keys
            .binary_search_by_key(&key, |&(k, _, _)| k)
            .ok()
            .map(|pos| {
                let (_, s, e) = self.keys[pos];
                &self.order[s as usize..e as usize]
            })
    }

    /// Fills `best` (sorted ascending by chord length) with the nearest points.
    fn knn_raw(&self, q: [f64; 3], best: &mut [(f64, u32)]) {
        let k = best.len().min(self.points.len());
        for b in best.iter_mut() {
            *b = (f64::INFINITY, u32::MAX);
        }
        let [cx, cy, cz] = q.map(|c| (c / self.cell).floor() as i64);
        let max_ring = (2.0 / self.cell).ceil() as i64 + 1;
        let mut ring = 1i64;
        let mut searched = -1i64;
        loop {
            for ix in cx - ring..=cx + ring {
                for iy in cy - ring..=cy + ring {
                    for iz in cz - ring..=cz + ring {
                        let shell = (ix - cx).abs().max((iy - cy).abs()).max((iz - cz).abs());
                        if shell <= searched {
                            continue;
                        }
                        let Some(members) = self.cell_range(cell_key(ix, iy, iz)) else {
                            continue;
                        };
                        for &m in members {
                            let p = self.points[m as usize];
                            let d = ((p[0] - q[0]).powi(2)
                                + (p[1] - q[1]).powi(2)
                                + (p[2] - q[2]).powi(2))
                            .sqrt();
                            insert_sorted(&mut best[..k], (d, m));
                        }
                    }
                }
            }
            searched = ring;
            // Every point within chord `ring·cell` of q lies in the searched cells.
            if best[k - 1].0 <= ring as f64 * self.cell || ring >= max_ring {
                break;
            }
            ring += 1;
        }
    }

    /// The `K` nearest points to `d` as `(index, great-circle angle)`, nearest first.
    pub fn knn<const K: usize>(&self, d: &Direction) -> [(usize, f64); K] {
        let mut best = [(f64::INFINITY, u32::MAX); K];
        self.knn_raw([d.x(), d.y(), d.z()], &mut best);
        best.map(|(c, i)| (i as usize, chord_to_angle(c)))
    }

    pub fn nearest(&self, d: &Direction) -> (usize, f64) {
        self.knn::<1>(d)[0]
    }
}

fn insert_sorted(best: &mut [(f64, u32)], cand: (f64, u32)) {
    let k = best.len();
    if k == 0 || !(cand < best[k - 1]) {
        return;
    }
    let mut pos = k - 1;
    while pos > 0 && cand < best[pos - 1] {
        best[pos] = best[pos - 1];
        pos -= 1;
    }
    best[pos] = cand;
}
