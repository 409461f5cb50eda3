//! Growing the map from new keyframe points.

use super::init::{neighbor_scale, seed_gaussian, SeedPoint, SCALE_NEIGHBOR};
use crate::scene::GaussianMap;

fn push_seed(map: &mut GaussianMap, seed: &SeedPoint, opacity: f64) {
    let nn = map.k_nearest(&seed.position, SCALE_NEIGHBOR, None);
    let scale = neighbor_scale(nn.last().map(|n| n.0));
    map.push(seed_gaussian(seed, scale, opacity));
}

/// Inserts each point whose distance to every existing mean is strictly
/// greater than `tau`. Points accepted earlier in the batch count as existing
/// for later ones. Returns the number inserted.
pub fn insert_dynamic(map: &mut GaussianMap, points: &[SeedPoint], tau: f64, opacity: f64) -> usize {
    let mut inserted = 0;
    for p in points {
        // `any_within` is inclusive, so a point exactly at `tau` is rejected
        if !map.any_within(&p.position, tau) {
            push_seed(map, p, opacity);
            inserted += 1;
        }
    }
    inserted
}

/// Inserts every point; the baseline the distance gate is compared against.
pub fn insert_unconditional(map: &mut GaussianMap, points: &[SeedPoint], opacity: f64) -> usize {
    for p in points {
        push_seed(map, p, opacity);
    }
    points.len()
}
