use nalgebra::{Vector3, Vector4};

use super::gaussian::Gaussian3D;
use super::grid::VoxelGrid;

/// Column-wise Gaussian storage plus a voxel hash index over the means.
///
/// Every mutation goes through `&mut self` and bumps the generation counter;
/// renders record the generation they were produced from.
#[derive(Clone, Debug)]
pub struct GaussianMap {
    means: Vec<Vector3<f64>>,
    rotations: Vec<Vector4<f64>>,
    log_scales: Vec<Vector3<f64>>,
    opacity_logits: Vec<f64>,
    colors: Vec<Vector3<f64>>,
    index: VoxelGrid,
    generation: u64,
}

/// Mutable view of the parameter columns. The spatial index is rebuilt when
/// the view is dropped.
pub struct ParamsMut<'a> {
    pub means: &'a mut [Vector3<f64>],
    pub rotations: &'a mut [Vector4<f64>],
    pub log_scales: &'a mut [Vector3<f64>],
    pub opacity_logits: &'a mut [f64],
    pub colors: &'a mut [Vector3<f64>],
    index: &'a mut VoxelGrid,
}

impl Drop for ParamsMut<'_> {
    fn drop(&mut self) {
        *self.index = VoxelGrid::build(self.index.cell_size(), self.means);
    }
}

impl GaussianMap {
    pub fn new(cell_size: f64) -> Self {
        Self {
            means: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            colors: Vec::new(),
            index: VoxelGrid::new(cell_size),
            generation: 0,
        }
    }

    pub fn from_gaussians(cell_size: f64, gaussians: impl IntoIterator<Item = Gaussian3D>) -> Self {
        let mut map = Self::new(cell_size);
        for g in gaussians {
            map.push(g);
        }
        map
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn cell_size(&self) -> f64 {
        self.index.cell_size()
    }

    pub fn index(&self) -> &VoxelGrid {
        &self.index
    }

    pub fn means(&self) -> &[Vector3<f64>] {
        &self.means
    }

    pub fn rotations(&self) -> &[Vector4<f64>] {
        &self.rotations
    }

    pub fn log_scales(&self) -> &[Vector3<f64>] {
        &self.log_scales
    }

    pub fn opacity_logits(&self) -> &[f64] {
        &self.opacity_logits
    }

    pub fn colors(&self) -> &[Vector3<f64>] {
        &self.colors
    }

    pub fn get(&self, i: usize) -> Gaussian3D {
        Gaussian3D {
            mean: self.means[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            color: self.colors[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian3D> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn push(&mut self, g: Gaussian3D) -> usize {
        let i = self.means.len();
        self.index.insert(i, &g.mean);
        self.means.push(g.mean);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.colors.push(g.color);
        self.generation += 1;
        i
    }

    pub fn set(&mut self, i: usize, g: Gaussian3D) {
        let moved = self.means[i] != g.mean;
        self.means[i] = g.mean;
        self.rotations[i] = g.rotation;
        self.log_scales[i] = g.log_scale;
        self.opacity_logits[i] = g.opacity_logit;
        self.colors[i] = g.color;
        if moved {
            self.reindex();
        }
        self.generation += 1;
    }

    pub fn params_mut(&mut self) -> ParamsMut<'_> {
        self.generation += 1;
        ParamsMut {
            means: &mut self.means,
            rotations: &mut self.rotations,
            log_scales: &mut self.log_scales,
            opacity_logits: &mut self.opacity_logits,
            colors: &mut self.colors,
            index: &mut self.index,
        }
    }

    /// Keeps Gaussians whose mask entry is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut k = keep.iter();
            v.retain(|_| *k.next().unwrap());
        }
        filter(&mut self.means, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.colors, keep);
        self.reindex();
        self.generation += 1;
    }

    pub fn set_cell_size(&mut self, cell_size: f64) {
        self.index = VoxelGrid::build(cell_size, &self.means);
        self.generation += 1;
    }

    fn reindex(&mut self) {
        self.index = VoxelGrid::build(self.index.cell_size(), &self.means);
    }

    /// `min ‖q − μ‖` over all means; `+∞` for an empty map.
    pub fn distance_to_nearest(&self, q: &Vector3<f64>) -> f64 {
        self.index.nearest_distance(q, &self.means).unwrap_or(f64::INFINITY)
    }

    pub fn any_within(&self, q: &Vector3<f64>, radius: f64) -> bool {
        self.index.any_within(q, radius, &self.means)
    }

    pub fn k_nearest(&self, q: &Vector3<f64>, k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        self.index.k_nearest(q, k, &self.means, exclude)
    }

    /// Radius of the mean cloud around its centroid.
    pub fn extent(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let centroid = self.means.iter().sum::<Vector3<f64>>() / self.len() as f64;
        self.means
            .iter()
            .map(|m| (m - centroid).norm())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(x: f64) -> Gaussian3D {
        Gaussian3D::isotropic(Vector3::new(x, 0.0, 0.0), 0.1, 0.5, Vector3::repeat(0.5))
    }

    #[test]
    fn index_follows_mutations() {
        let mut map = GaussianMap::from_gaussians(0.5, (0..10).map(|i| g(i as f64)));
        assert_eq!(map.index().indices(), (0..10).collect::<Vec<_>>());
        let keep: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        map.retain_mask(&keep);
        assert_eq!(map.len(), 5);
        assert_eq!(map.index().indices(), (0..5).collect::<Vec<_>>());
        {
            let p = map.params_mut();
            p.means[0] = Vector3::new(100.0, 0.0, 0.0);
        }
        assert_eq!(map.distance_to_nearest(&Vector3::new(100.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn generation_increments() {
        let mut map = GaussianMap::new(1.0);
        let g0 = map.generation();
        map.push(g(0.0));
        assert!(map.generation() > g0);
        let g1 = map.generation();
        map.set(0, g(1.0));
        assert!(map.generation() > g1);
    }

    #[test]
    fn empty_map_distance_is_infinite() {
        assert_eq!(GaussianMap::new(1.0).distance_to_nearest(&Vector3::zeros()), f64::INFINITY);
    }
}
