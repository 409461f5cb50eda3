//! Reverse-mode gradients of the compositing chain.
//!
//! Per pixel the forward composite is recomputed, then walked back to front
//! with the running "color behind" `Sᵢ` so no division by `1 − αᵢ` is needed:
//!
//! ```text
//! S_last = background,   S_{i-1} = α_i c_i + (1 − α_i) S_i
//! ∂C/∂α_i = T_i (c_i − S_i)
//! ```
//!
//! The screen-space gradients are then pulled back through the conic inverse,
//! the EWA covariance `J W Σ Wᵀ Jᵀ`, the pinhole projection and `Σ = R S Sᵀ Rᵀ`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::render::{composite_pixel, Binned};
use crate::scene::{quat_matrix_vjp, quat_to_matrix, CameraFrame, GaussianMap, Image};

/// Per-Gaussian gradients of a scalar loss w.r.t. the stored parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub means: Vec<Vector3<f64>>,
    /// W.r.t. the raw (unnormalized) quaternion.
    pub rotations: Vec<Vector4<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    /// Screen-space gradient w.r.t. the projected mean, used by densification.
    pub means2d: Vec<Vector2<f64>>,
}

impl ParamGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![Vector3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
            colors: vec![Vector3::zeros(); n],
            means2d: vec![Vector2::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logits.iter().all(|x| x.is_finite())
            && self.colors.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: Vector3<f64>,
}

impl std::ops::AddAssign for ScreenGrad {
    fn add_assign(&mut self, o: Self) {
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.opacity += o.opacity;
        self.color += o.color;
    }
}

/// Gradients of `L` given `upstream = ∂L/∂C` (row-major H×W×3, same layout as
/// [`Image`]) for the render of `map` from `cam` over `background`.
pub fn render_backward(
    map: &GaussianMap,
    cam: &CameraFrame,
    background: &Vector3<f64>,
    upstream: &Image,
) -> ParamGradients {
    let binned = Binned::new(map, cam);
    assert_eq!(upstream.width(), binned.width);
    assert_eq!(upstream.height(), binned.height);

    let per_tile: Vec<Vec<ScreenGrad>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let candidates = &binned.tiles[tile];
            let mut acc = vec![ScreenGrad::default(); candidates.len()];
            let mut contribs = Vec::new();
            for (x, y) in binned.tile_pixels(tile) {
                let g = upstream.pixel(x, y);
                if g == Vector3::zeros() {
                    continue;
                }
                composite_pixel(&binned.projected, candidates, x, y, &mut contribs);
                let mut behind = *background;
                for c in contribs.iter().rev() {
                    let pg = &binned.projected[candidates[c.slot as usize] as usize];
                    let weight = c.alpha * c.transmittance;
                    let d_alpha = c.transmittance * g.dot(&(pg.color - behind));
                    behind = pg.color * c.alpha + behind * (1.0 - c.alpha);

                    let d_m = -0.5 * c.alpha * d_alpha;
                    let a = &mut acc[c.slot as usize];
                    a.color += g * weight;
                    a.opacity += d_alpha * c.falloff;
                    a.conic += c.offset * c.offset.transpose() * d_m;
                    a.mean2d -= pg.conic * c.offset * (2.0 * d_m);
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); binned.projected.len()];
    for (tile, grads) in per_tile.into_iter().enumerate() {
        for (slot, g) in grads.into_iter().enumerate() {
            screen[binned.tiles[tile][slot] as usize] += g;
        }
    }

    let k = &cam.intrinsics;
    let w = cam.pose.rotation_matrix();
    let per_gaussian: Vec<_> = binned
        .projected
        .par_iter()
        .zip(screen.par_iter())
        .map(|(p, sg)| {
            let gauss = map.get(p.source_id);
            let t = p.cam_point;
            let (iz, iz2, iz3) = (1.0 / t.z, 1.0 / (t.z * t.z), 1.0 / (t.z * t.z * t.z));

            // A = cov2d⁻¹  ⇒  ∂L/∂cov2d = −A Gₐ A
            let d_cov2d = -(p.conic * sg.conic * p.conic);
            let jac = p.jacobian;
            let d_cov_cam = jac.transpose() * d_cov2d * jac;
            let d_jac = d_cov2d * jac * p.cov_cam.transpose() + d_cov2d.transpose() * jac * p.cov_cam;

            let mut d_t = Vector3::new(
                k.fx * iz * sg.mean2d.x,
                k.fy * iz * sg.mean2d.y,
                -k.fx * t.x * iz2 * sg.mean2d.x - k.fy * t.y * iz2 * sg.mean2d.y,
            );
            d_t.x += -k.fx * iz2 * d_jac[(0, 2)];
            d_t.y += -k.fy * iz2 * d_jac[(1, 2)];
            d_t.z += -k.fx * iz2 * d_jac[(0, 0)] + 2.0 * k.fx * t.x * iz3 * d_jac[(0, 2)]
                - k.fy * iz2 * d_jac[(1, 1)]
                + 2.0 * k.fy * t.y * iz3 * d_jac[(1, 2)];
            let d_mean = w.transpose() * d_t;

            let d_sigma = w.transpose() * d_cov_cam * w;
            let qn = gauss.rotation.norm();
            let q_hat = gauss.rotation / qn;
            let rot = quat_to_matrix(&q_hat);
            let scale = gauss.scale();
            let m = rot * Matrix3::from_diagonal(&scale);
            let d_m = (d_sigma + d_sigma.transpose()) * m;
            let rt_dm = rot.transpose() * d_m;
            let d_log_scale = Vector3::new(
                rt_dm[(0, 0)] * scale.x,
                rt_dm[(1, 1)] * scale.y,
                rt_dm[(2, 2)] * scale.z,
            );
            let d_rot = d_m * Matrix3::from_diagonal(&scale);
            let d_q_hat = quat_matrix_vjp(&q_hat, &d_rot);
            let d_q = (d_q_hat - q_hat * q_hat.dot(&d_q_hat)) / qn;

            let d_logit = sg.opacity * p.opacity * (1.0 - p.opacity);
            (p.source_id, d_mean, d_q, d_log_scale, d_logit, sg.color, sg.mean2d)
        })
        .collect();

    let mut out = ParamGradients::zeros(map.len());
    for (id, d_mean, d_q, d_ls, d_logit, d_color, d_m2) in per_gaussian {
        out.means[id] = d_mean;
        out.rotations[id] = d_q;
        out.log_scales[id] = d_ls;
        out.opacity_logits[id] = d_logit;
        out.colors[id] = d_color;
        out.means2d[id] = d_m2;
    }
    out
}
