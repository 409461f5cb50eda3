//! Seeding Gaussians from tracked patches.

use nalgebra::{Vector2, Vector3};

use super::MapperConfig;
use crate::scene::{CameraFrame, Gaussian3D, GaussianMap, Intrinsics, Se3};
use crate::scene::grid::VoxelGrid;
use crate::track::{Keyframe, Patch};
use crate::{Error, Result};

/// Patches at or below this inverse depth are not back-projected.
pub const MIN_INV_DEPTH: f64 = 1e-6;
/// Initial scales are clamped to this range.
pub const SCALE_RANGE: (f64, f64) = (1e-4, 1.0);
/// Scale given to a point with no neighbor to measure against.
pub const LONE_SCALE: f64 = 0.05;
/// The initial scale is the distance to this nearest neighbor.
pub const SCALE_NEIGHBOR: usize = 3;

/// A world point with the color observed at its patch center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedPoint {
    pub position: Vector3<f64>,
    pub color: Vector3<f64>,
}

/// `T⁻¹ · K⁻¹[u, v, 1] / d`; `None` for `d ≤ MIN_INV_DEPTH`.
pub fn back_project(center: &Vector2<f64>, inv_depth: f64, pose: &Se3, k: &Intrinsics) -> Option<Vector3<f64>> {
    if !(inv_depth > MIN_INV_DEPTH) {
        return None;
    }
    Some(pose.inverse().transform_point(&(k.unproject(center) / inv_depth)))
}

/// Back-projects `patches` hosted by `frame`, coloring each point by a
/// bilinear sample of the frame image at the patch center.
pub fn seed_points(patches: &[Patch], frame: &CameraFrame) -> Vec<SeedPoint> {
    patches
        .iter()
        .filter_map(|p| {
            let position = back_project(&p.center, p.inv_depth, &frame.pose, &frame.intrinsics)?;
            let color = frame.image.sample(p.center.x, p.center.y).map(|c| c.clamp(0.0, 1.0));
            Some(SeedPoint { position, color })
        })
        .collect()
}

pub fn keyframe_seeds(kf: &Keyframe) -> Vec<SeedPoint> {
    seed_points(&kf.patches, &kf.frame)
}

/// Clamped initial scale from the distance to the chosen neighbor.
pub fn neighbor_scale(distance: Option<f64>) -> f64 {
    distance.map_or(LONE_SCALE, |d| d.clamp(SCALE_RANGE.0, SCALE_RANGE.1))
}

pub fn seed_gaussian(seed: &SeedPoint, scale: f64, opacity: f64) -> Gaussian3D {
    Gaussian3D::isotropic(seed.position, scale, opacity, seed.color)
}

/// Per point: distance to its nearest and to its `SCALE_NEIGHBOR`-th nearest
/// other point (the farthest available when fewer exist).
fn neighbor_distances(points: &[Vector3<f64>]) -> Vec<(Option<f64>, Option<f64>)> {
    let (lo, hi) = points.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let diag = if points.is_empty() { 0.0 } else { (hi - lo).norm() };
    let cell = (diag / (points.len().max(1) as f64).cbrt()).max(1e-6);
    let grid = VoxelGrid::build(cell, points);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = grid.k_nearest(p, SCALE_NEIGHBOR, points, Some(i));
            (nn.first().map(|n| n.0), nn.last().map(|n| n.0))
        })
        .collect()
}

/// Insertion threshold used when none is configured: twice the median
/// nearest-neighbor spacing.
pub fn default_tau(nearest: &[f64]) -> f64 {
    if nearest.is_empty() {
        return 2.0 * LONE_SCALE;
    }
    let mut d = nearest.to_vec();
    d.sort_by(f64::total_cmp);
    (2.0 * d[d.len() / 2]).max(1e-6)
}

/// Builds the initial map from seed points: one isotropic Gaussian per point
/// with identity rotation, the configured opacity and a scale equal to the
/// distance to the third-nearest point. The spatial index cell size is the
/// insertion threshold `τ`.
pub fn initialize_from_seeds(seeds: &[SeedPoint], cfg: &MapperConfig) -> Result<GaussianMap> {
    if seeds.is_empty() {
        return Err(Error::Validation("no patch with positive inverse depth to initialize from".into()));
    }
    let points: Vec<Vector3<f64>> = seeds.iter().map(|s| s.position).collect();
    let dists = neighbor_distances(&points);
    let nearest: Vec<f64> = dists.iter().filter_map(|d| d.0).collect();
    let tau = cfg.tau.unwrap_or_else(|| default_tau(&nearest));
    Ok(GaussianMap::from_gaussians(
        tau,
        seeds
            .iter()
            .zip(&dists)
            .map(|(s, d)| seed_gaussian(s, neighbor_scale(d.1), cfg.init_opacity)),
    ))
}

/// Initializes the map from the patches of the first keyframes.
pub fn initialize_map(keyframes: &[Keyframe], cfg: &MapperConfig) -> Result<GaussianMap> {
    let seeds: Vec<SeedPoint> = keyframes.iter().flat_map(keyframe_seeds).collect();
    initialize_from_seeds(&seeds, cfg)
}
