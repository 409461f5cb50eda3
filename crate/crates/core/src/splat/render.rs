use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::project::{project, ProjectedGaussian};
use super::{FOOTPRINT_WEIGHT, MAHALANOBIS_CUTOFF, MAX_CONTRIBUTORS, TILE_SIZE, TRANSMITTANCE_MIN};
use crate::scene::{CameraFrame, GaussianMap, Image};

/// Output of one forward render.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    /// Accumulated opacity `1 − Π(1 − αᵢ)` per pixel.
    pub alpha: Vec<f64>,
    /// Index of the Gaussian with the largest blend weight at each pixel.
    pub dominant_id: Vec<Option<usize>>,
    /// Per Gaussian: number of pixels where it is dominant.
    pub dominance_count: Vec<usize>,
    /// Per Gaussian: number of pixels where its blend weight exceeds 1e-3.
    pub footprint_count: Vec<usize>,
    /// Per Gaussian 3σ screen radius; 0 for culled Gaussians.
    pub radii: Vec<f64>,
    /// Map generation the render was produced from.
    pub generation: u64,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    /// Indices of Gaussians that survived culling.
    pub fn visible(&self) -> impl Iterator<Item = usize> + '_ {
        self.radii.iter().enumerate().filter(|(_, r)| **r > 0.0).map(|(i, _)| i)
    }
}

/// Projected Gaussians in compositing order plus per-tile candidate lists.
pub(crate) struct Binned {
    pub projected: Vec<ProjectedGaussian>,
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub width: usize,
    pub height: usize,
}

impl Binned {
    pub fn new(map: &GaussianMap, cam: &CameraFrame) -> Self {
        let (width, height) = (cam.intrinsics.width, cam.intrinsics.height);
        let mut projected = project(map, cam);
        projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_id.cmp(&b.source_id)));
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (i, p) in projected.iter().enumerate() {
            if let Some((x0, y0, x1, y1)) = p.pixel_bounds(width, height) {
                for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                    for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                        tiles[ty * tiles_x + tx].push(i as u32);
                    }
                }
            }
        }
        Self {
            projected,
            tiles,
            tiles_x,
            width,
            height,
        }
    }

    pub fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(self.width);
        let y1 = (y0 + TILE_SIZE).min(self.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

/// One composited Gaussian at one pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    /// Position in the tile's candidate list.
    pub slot: u32,
    pub alpha: f64,
    /// Transmittance before this Gaussian.
    pub transmittance: f64,
    pub falloff: f64,
    pub offset: Vector2<f64>,
}

/// Front-to-back compositing at pixel `(x, y)` over a depth-sorted candidate
/// list. Returns the contributions and the final transmittance.
pub(crate) fn composite_pixel(
    projected: &[ProjectedGaussian],
    candidates: &[u32],
    x: usize,
    y: usize,
    out: &mut Vec<Contribution>,
) -> f64 {
    out.clear();
    let p = Vector2::new(x as f64, y as f64);
    let mut t = 1.0;
    for (slot, &gi) in candidates.iter().enumerate() {
        let g = &projected[gi as usize];
        let d = p - g.mean2d;
        let m = d.dot(&(g.conic * d));
        if !(m <= MAHALANOBIS_CUTOFF) {
            continue;
        }
        let falloff = (-0.5 * m).exp();
        let alpha = g.opacity * falloff;
        if alpha <= 0.0 {
            continue;
        }
        out.push(Contribution {
            slot: slot as u32,
            alpha,
            transmittance: t,
            falloff,
            offset: d,
        });
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_MIN || out.len() >= MAX_CONTRIBUTORS {
            break;
        }
    }
    t
}

struct TilePixel {
    x: usize,
    y: usize,
    color: Vector3<f64>,
    alpha: f64,
    dominant: Option<usize>,
    footprint: Vec<usize>,
}

/// Renders `map` from `cam` over a constant background.
///
/// Gaussians are composited front to back in (depth, index) order; the pass is
/// deterministic regardless of the number of rayon workers.
pub fn render(map: &GaussianMap, cam: &CameraFrame, background: &Vector3<f64>) -> RenderOutput {
    let binned = Binned::new(map, cam);
    let (w, h) = (binned.width, binned.height);

    let tiles: Vec<Vec<TilePixel>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let candidates = &binned.tiles[tile];
            let mut contribs = Vec::new();
            binned
                .tile_pixels(tile)
                .map(|(x, y)| {
                    let t_final = composite_pixel(&binned.projected, candidates, x, y, &mut contribs);
                    let mut color = background * t_final;
                    let mut best: Option<(f64, usize)> = None;
                    let mut footprint = Vec::new();
                    for c in &contribs {
                        let g = &binned.projected[candidates[c.slot as usize] as usize];
                        let weight = c.alpha * c.transmittance;
                        color += g.color * weight;
                        if weight > 0.0 && best.is_none_or(|(bw, _)| weight > bw) {
                            best = Some((weight, g.source_id));
                        }
                        if weight > FOOTPRINT_WEIGHT {
                            footprint.push(g.source_id);
                        }
                    }
                    TilePixel {
                        x,
                        y,
                        color,
                        alpha: 1.0 - t_final,
                        dominant: best.map(|(_, id)| id),
                        footprint,
                    }
                })
                .collect()
        })
        .collect();

    let mut color = Image::new(w, h);
    let mut alpha = vec![0.0; w * h];
    let mut dominant_id = vec![None; w * h];
    let mut dominance_count = vec![0; map.len()];
    let mut footprint_count = vec![0; map.len()];
    for px in tiles.into_iter().flatten() {
        let i = px.y * w + px.x;
        color.set_pixel(px.x, px.y, &px.color);
        alpha[i] = px.alpha;
        dominant_id[i] = px.dominant;
        if let Some(id) = px.dominant {
            dominance_count[id] += 1;
        }
        for id in px.footprint {
            footprint_count[id] += 1;
        }
    }
    let mut radii = vec![0.0; map.len()];
    for p in &binned.projected {
        radii[p.source_id] = p.radius;
    }

    RenderOutput {
        color,
        alpha,
        dominant_id,
        dominance_count,
        footprint_count,
        radii,
        generation: map.generation(),
    }
}
