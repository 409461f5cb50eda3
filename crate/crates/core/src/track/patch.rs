use nalgebra::Vector2;
use rand::Rng;

use crate::scene::GrayImage;
use crate::{Error, Result};

/// Non-maximum suppression radius for patch centers, pixels.
pub const NMS_RADIUS: f64 = 8.0;
/// Inverse depth assigned to patches of the very first keyframe.
pub const DEFAULT_INV_DEPTH: f64 = 0.5;

/// A square patch hosted by a keyframe. The inverse depth is shared by every
/// pixel of the patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub host_frame: usize,
    pub center: Vector2<f64>,
    /// Odd side length.
    pub size: usize,
    pub inv_depth: f64,
    /// Row-major `size × size` intensities sampled around `center`.
    pub template: Vec<f64>,
    pub index: usize,
}

impl Patch {
    pub fn half(&self) -> usize {
        self.size / 2
    }
}

pub(crate) fn extract_template(img: &GrayImage, center: &Vector2<f64>, size: usize) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut out = Vec::with_capacity(size * size);
    for dy in 0..size {
        for dx in 0..size {
            out.push(img.sample(center.x - r + dx as f64, center.y - r + dy as f64));
        }
    }
    out
}

/// Samples up to `count` patches of side `size` from `img`.
///
/// Candidates are drawn with probability proportional to gradient magnitude;
/// a candidate is rejected when it lies within [`NMS_RADIUS`] of an accepted
/// center or is not a local gradient maximum. If the image has no gradient the
/// draw is uniform.
pub fn sample_patches<R: Rng>(
    img: &GrayImage,
    count: usize,
    size: usize,
    host_frame: usize,
    inv_depth: f64,
    rng: &mut R,
) -> Result<Vec<Patch>> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::Validation(format!("patch size must be odd, got {size}")));
    }
    let (w, h) = (img.width(), img.height());
    if w <= 2 * size || h <= 2 * size {
        return Err(Error::Validation(format!(
            "image {w}x{h} too small for {size}x{size} patches"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let margin = size / 2 + 1;
    let (gx, gy) = img.gradient();
    let mag = GrayImage::from_fn(w, h, |x, y| {
        if x < margin || y < margin || x + margin >= w || y + margin >= h {
            0.0
        } else {
            gx.get(x, y).hypot(gy.get(x, y))
        }
    });

    let mut cumulative = Vec::with_capacity(w * h);
    let mut total = 0.0;
    for &m in mag.data() {
        total += m;
        cumulative.push(total);
    }
    let uniform = !(total > 1e-12);

    let is_local_max = |x: usize, y: usize| {
        let m = mag.get(x, y);
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let o = mag.get(xx, yy);
                // ties resolve toward the lower raster index
                if o > m || (o == m && (yy, xx) < (y, x)) {
                    return false;
                }
            }
        }
        true
    };

    let mut centers: Vec<Vector2<f64>> = Vec::with_capacity(count);
    let max_draws = count * 200;
    let mut draws = 0;
    let mut radius = NMS_RADIUS;
    while centers.len() < count {
        if draws >= max_draws {
            // too crowded for the current radius: relax instead of failing
            radius *= 0.5;
            draws = 0;
            if radius < 1.0 {
                break;
            }
        }
        draws += 1;
        let (x, y) = if uniform {
            (rng.random_range(margin..w - margin), rng.random_range(margin..h - margin))
        } else {
            let u = rng.random::<f64>() * total;
            let i = cumulative.partition_point(|c| *c <= u).min(w * h - 1);
            let (x, y) = (i % w, i / w);
            if !is_local_max(x, y) {
                continue;
            }
            (x, y)
        };
        let c = Vector2::new(x as f64, y as f64);
        if centers.iter().any(|o| (o - c).norm() < radius) {
            continue;
        }
        centers.push(c);
    }

    Ok(centers
        .into_iter()
        .enumerate()
        .map(|(index, center)| Patch {
            host_frame,
            template: extract_template(img, &center, size),
            center,
            size,
            inv_depth,
            index,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_falls_back_to_uniform() {
        let img = GrayImage::from_fn(64, 48, |_, _| 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let patches = sample_patches(&img, 12, 3, 0, 0.5, &mut rng).unwrap();
        assert_eq!(patches.len(), 12);
        for p in &patches {
            assert!(p.center.x >= 1.0 && p.center.y >= 1.0);
            assert!(p.center.x <= 62.0 && p.center.y <= 46.0);
        }
    }

    #[test]
    fn zero_count_is_empty() {
        let img = GrayImage::from_fn(32, 32, |x, _| x as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_patches(&img, 0, 3, 0, 0.5, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn small_image_rejected() {
        let img = GrayImage::from_fn(6, 40, |_, _| 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_patches(&img, 4, 3, 0, 0.5, &mut rng).is_err());
    }

    #[test]
    fn centers_respect_suppression_radius() {
        let img = GrayImage::from_fn(96, 96, |x, y| (x as f64 * 0.4).sin() * (y as f64 * 0.3).cos());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let patches = sample_patches(&img, 30, 5, 2, 0.5, &mut rng).unwrap();
        for (i, a) in patches.iter().enumerate() {
            assert_eq!(a.host_frame, 2);
            assert_eq!(a.template.len(), 25);
            for b in &patches[i + 1..] {
                assert!((a.center - b.center).norm() >= NMS_RADIUS);
            }
        }
    }

    #[test]
    fn checkerboard_centers_sit_on_edges() {
        let sq = 16usize;
        let img = GrayImage::from_fn(128, 112, |x, y| if (x / sq + y / sq) % 2 == 0 { 0.9 } else { 0.1 });
        // square boundaries sit half a pixel before each multiple of the side
        let edge_dist = |v: f64| {
            let b = v + 0.5;
            let r = b.rem_euclid(sq as f64);
            r.min(sq as f64 - r)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patches = sample_patches(&img, 40, 9, 0, 0.5, &mut rng).unwrap();
        assert_eq!(patches.len(), 40);
        for p in &patches {
            let d = edge_dist(p.center.x).min(edge_dist(p.center.y));
            assert!(d <= 2.0, "center {} is {d} px from an edge", p.center);
        }
    }
}
