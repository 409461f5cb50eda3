//! Uniform voxel hash grid over point indices.

use std::collections::HashMap;

use nalgebra::Vector3;

type Cell = [i64; 3];

/// Hash grid storing indices into an external point array. Queries take the
/// point array so the grid never duplicates coordinates.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    cell_size: f64,
    cells: HashMap<Cell, Vec<usize>>,
    len: usize,
    lo: Cell,
    hi: Cell,
}

impl VoxelGrid {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite(), "cell size must be positive");
        Self {
            cell_size,
            cells: HashMap::new(),
            len: 0,
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        }
    }

    pub fn build(cell_size: f64, points: &[Vector3<f64>]) -> Self {
        let mut grid = Self::new(cell_size);
        for (i, p) in points.iter().enumerate() {
            grid.insert(i, p);
        }
        grid
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn cell_of(&self, p: &Vector3<f64>) -> Cell {
        [
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
            (p.z / self.cell_size).floor() as i64,
        ]
    }

    pub fn insert(&mut self, index: usize, p: &Vector3<f64>) {
        let c = self.cell_of(p);
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(c[k]);
            self.hi[k] = self.hi[k].max(c[k]);
        }
        self.cells.entry(c).or_default().push(index);
        self.len += 1;
    }

    /// Every stored index, sorted.
    pub fn indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.cells.values().flatten().copied().collect();
        out.sort_unstable();
        out
    }

    /// Largest Chebyshev cell distance from `c` to any occupied cell bound.
    fn max_ring(&self, c: &Cell) -> i64 {
        if self.len == 0 {
            return -1;
        }
        (0..3)
            .map(|k| (c[k] - self.lo[k]).abs().max((self.hi[k] - c[k]).abs()))
            .max()
            .unwrap_or(0)
    }

    fn for_ring(&self, center: &Cell, r: i64, mut f: impl FnMut(usize)) {
        for dx in -r..=r {
            for dy in -r..=r {
                let edge = dx.abs() == r || dy.abs() == r;
                let mut visit = |dz: i64| {
                    let cell = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if let Some(ids) = self.cells.get(&cell) {
                        ids.iter().for_each(|&i| f(i));
                    }
                };
                if edge {
                    (-r..=r).for_each(&mut visit);
                } else {
                    visit(-r);
                    visit(r);
                }
            }
        }
    }

    /// True when some stored point lies within `radius` (inclusive) of `q`.
    pub fn any_within(&self, q: &Vector3<f64>, radius: f64, points: &[Vector3<f64>]) -> bool {
        let c = self.cell_of(q);
        let rings = (radius / self.cell_size).ceil() as i64;
        let r2 = radius * radius;
        let mut found = false;
        for r in 0..=rings.min(self.max_ring(&c)) {
            self.for_ring(&c, r, |i| {
                if (points[i] - q).norm_squared() <= r2 {
                    found = true;
                }
            });
            if found {
                return true;
            }
        }
        false
    }

    /// Distance from `q` to the closest stored point, `None` when empty.
    pub fn nearest_distance(&self, q: &Vector3<f64>, points: &[Vector3<f64>]) -> Option<f64> {
        self.k_nearest(q, 1, points, None).first().map(|(d, _)| *d)
    }

    /// The `k` stored points nearest to `q` as `(distance, index)`, ascending.
    /// `exclude` skips one index (the query point itself).
    pub fn k_nearest(
        &self,
        q: &Vector3<f64>,
        k: usize,
        points: &[Vector3<f64>],
        exclude: Option<usize>,
    ) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return best;
        }
        let c = self.cell_of(q);
        let last = self.max_ring(&c);
        for r in 0..=last {
            self.for_ring(&c, r, |i| {
                if Some(i) == exclude {
                    return;
                }
                let d2 = (points[i] - q).norm_squared();
                if best.len() < k || d2 < best[best.len() - 1].0 {
                    let pos = best.partition_point(|(b, j)| (*b, *j) < (d2, i));
                    best.insert(pos, (d2, i));
                    best.truncate(k);
                }
            });
            // points in ring r+1 are at least r cells away
            let bound = r as f64 * self.cell_size;
            if best.len() == k && best[k - 1].0 <= bound * bound {
                break;
            }
        }
        best.into_iter().map(|(d2, i)| (d2.sqrt(), i)).collect()
    }
}
