//! Clarity splitting, gradient-driven clone/split and opacity pruning.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::MapperConfig;
use crate::scene::{quat_to_matrix, Gaussian3D, GaussianMap};
use crate::splat::RenderOutput;
use crate::{Error, Result};

/// Where each Gaussian of a mutated map came from: `Some(old index)` for
/// survivors, `None` for newly created ones.
pub type Origins = Vec<Option<usize>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyCounts {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Two children with means drawn from the parent's distribution, scales
/// divided by `divisor`, everything else copied.
pub fn split_gaussian<R: Rng>(g: &Gaussian3D, divisor: f64, rng: &mut R) -> [Gaussian3D; 2] {
    let r = quat_to_matrix(&g.unit_rotation());
    let s = g.scale();
    let shrink = divisor.ln();
    let mut child = || {
        let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        Gaussian3D {
            mean: g.mean + r * s.component_mul(&z),
            log_scale: g.log_scale.map(|l| l - shrink),
            ..*g
        }
    };
    [child(), child()]
}

/// Rebuilds `map` as survivors (in order) followed by `added`.
fn rebuild(map: &mut GaussianMap, keep: &[bool], added: Vec<Gaussian3D>) -> Origins {
    let mut origins: Origins = keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| Some(i)).collect();
    origins.extend(std::iter::repeat_n(None, added.len()));
    map.retain_mask(keep);
    for g in added {
        map.push(g);
    }
    origins
}

pub(crate) fn densify_clarity_tracked<R: Rng>(
    map: &mut GaussianMap,
    render: &RenderOutput,
    sigma_split: f64,
    divisor: f64,
    rng: &mut R,
) -> Result<(usize, Origins)> {
    if render.generation != map.generation() || render.dominance_count.len() != map.len() {
        return Err(Error::Validation("render was not produced from the current map".into()));
    }
    let mask: Vec<bool> = render.dominance_count.iter().map(|&c| c as f64 > sigma_split).collect();
    let n = mask.iter().filter(|m| **m).count();
    if n == 0 {
        return Ok((0, (0..map.len()).map(Some).collect()));
    }
    let children: Vec<Gaussian3D> = mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .flat_map(|(i, _)| split_gaussian(&map.get(i), divisor, rng))
        .collect();
    let keep: Vec<bool> = mask.iter().map(|m| !m).collect();
    Ok((n, rebuild(map, &keep, children)))
}

/// Splits every Gaussian that is the dominant contributor of more than
/// `sigma_split` pixels in `render`, which must come from the current map.
/// Returns the number of Gaussians split.
pub fn densify_clarity<R: Rng>(
    map: &mut GaussianMap,
    render: &RenderOutput,
    sigma_split: f64,
    divisor: f64,
    rng: &mut R,
) -> Result<usize> {
    densify_clarity_tracked(map, render, sigma_split, divisor, rng).map(|r| r.0)
}

/// Running per-Gaussian sum of screen-space positional gradient norms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientAccumulator {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl GradientAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// Adds one observation of Gaussian `i`.
    pub fn record(&mut self, i: usize, norm: f64) {
        self.sum[i] += norm;
        self.count[i] += 1;
    }

    /// Accumulates pixel-space mean gradients for the `visible` Gaussians of a
    /// `width × height` render, converted to normalized device coordinates.
    pub fn add(&mut self, means2d: &[Vector2<f64>], visible: impl IntoIterator<Item = usize>, width: usize, height: usize) {
        let ndc = Vector2::new(0.5 * width as f64, 0.5 * height as f64);
        for i in visible {
            self.record(i, means2d[i].component_mul(&ndc).norm());
        }
    }

    /// Mean recorded norm; zero for a never-visible Gaussian.
    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }

    /// Clears all statistics and resizes to `n` Gaussians.
    pub fn reset(&mut self, n: usize) {
        *self = Self::new(n);
    }

    /// Extends with zeroed entries for newly appended Gaussians.
    pub fn grow(&mut self, n: usize) {
        self.sum.resize(n, 0.0);
        self.count.resize(n, 0);
    }
}

pub(crate) fn densify_gradient_and_prune_tracked<R: Rng>(
    map: &mut GaussianMap,
    grads: &GradientAccumulator,
    cfg: &MapperConfig,
    extent: f64,
    densify: bool,
    rng: &mut R,
) -> Result<(DensifyCounts, Origins)> {
    if grads.len() != map.len() {
        return Err(Error::Validation(format!(
            "gradient statistics for {} Gaussians, map has {}",
            grads.len(),
            map.len()
        )));
    }
    let mut counts = DensifyCounts::default();
    let mut keep = vec![true; map.len()];
    let mut clones = Vec::new();
    let mut children = Vec::new();
    for i in (0..map.len()).filter(|_| densify) {
        if !(grads.mean(i) > cfg.grad_densify_threshold) {
            continue;
        }
        let g = map.get(i);
        if g.scale().max() < cfg.clone_extent_fraction * extent {
            clones.push(g);
            counts.cloned += 1;
        } else {
            children.extend(split_gaussian(&g, cfg.split_scale_divisor, rng));
            keep[i] = false;
            counts.split += 1;
        }
    }
    clones.extend(children);
    let mut origins = rebuild(map, &keep, clones);

    let alive: Vec<bool> = map.opacity_logits().iter().map(|&l| crate::scene::sigmoid(l) >= cfg.prune_opacity).collect();
    counts.pruned = alive.iter().filter(|a| !**a).count();
    if counts.pruned > 0 {
        map.retain_mask(&alive);
        let mut a = alive.iter();
        origins.retain(|_| *a.next().expect("same length"));
    }
    Ok((counts, origins))
}

/// Clones small and splits large Gaussians whose mean screen-space gradient
/// exceeds the threshold, then removes Gaussians below the prune opacity.
/// `extent` is the scene size the clone/split decision is relative to.
pub fn densify_gradient_and_prune<R: Rng>(
    map: &mut GaussianMap,
    grads: &GradientAccumulator,
    cfg: &MapperConfig,
    extent: f64,
    rng: &mut R,
) -> Result<DensifyCounts> {
    densify_gradient_and_prune_tracked(map, grads, cfg, extent, true, rng).map(|r| r.0)
}
