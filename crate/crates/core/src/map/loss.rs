use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::MapperConfig;
use crate::eval::ssim_with_grad;
use crate::scene::Image;
use crate::{Error, Result};

/// Components of the mapping objective.
///
/// `l_color = (1 − λ_photo)·l_photo + λ_photo·l_ssim` and
/// `total = λ_color·l_color + λ_reg·l_reg`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_photo: f64,
    pub l_ssim: f64,
    pub l_color: f64,
    pub l_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Per-Gaussian regularizer term `|max(floor, min(s))|`.
pub fn reg_term(scale: &Vector3<f64>, floor: f64) -> f64 {
    floor.max(scale.min()).abs()
}

fn weights(cfg: &MapperConfig) -> (f64, f64, f64, f64) {
    (cfg.lambda_photo, cfg.lambda_color, cfg.lambda_reg, cfg.reg_floor)
}

/// Evaluates the objective; `visible_scales` are the scales of the Gaussians
/// that survived culling in the render.
pub fn compute_loss(
    rendered: &Image,
    target: &Image,
    visible_scales: &[Vector3<f64>],
    cfg: &MapperConfig,
) -> Result<LossBreakdown> {
    Ok(loss_and_grad(rendered, target, visible_scales, cfg, false)?.0)
}

/// Objective plus `∂total/∂rendered` for the color part.
pub(crate) fn loss_and_grad(
    rendered: &Image,
    target: &Image,
    visible_scales: &[Vector3<f64>],
    cfg: &MapperConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Image>)> {
    if !rendered.same_shape(target) {
        return Err(Error::Validation(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width(),
            rendered.height(),
            target.width(),
            target.height()
        )));
    }
    let (lambda_photo, lambda_color, lambda_reg, floor) = weights(cfg);
    let n = rendered.data().len().max(1) as f64;
    let l_photo = rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;

    let (ssim, ssim_grad) = if want_grad {
        let (s, g) = ssim_with_grad(rendered, target)?;
        (s, Some(g))
    } else {
        (crate::eval::ssim(rendered, target)?, None)
    };
    let l_ssim = 1.0 - ssim;
    let l_reg = if visible_scales.is_empty() {
        0.0
    } else {
        visible_scales.iter().map(|s| reg_term(s, floor)).sum::<f64>() / visible_scales.len() as f64
    };
    let l_color = (1.0 - lambda_photo) * l_photo + lambda_photo * l_ssim;
    let total = lambda_color * l_color + lambda_reg * l_reg;
    let breakdown = LossBreakdown {
        l_photo,
        l_ssim,
        l_color,
        l_reg,
        total,
    };

    let grad = ssim_grad.map(|sg| {
        let photo_w = lambda_color * (1.0 - lambda_photo) / n;
        let ssim_w = lambda_color * lambda_photo;
        let data = rendered
            .data()
            .iter()
            .zip(target.data())
            .zip(sg.data())
            .map(|((a, b), g)| {
                let sign = if a > b {
                    1.0
                } else if a < b {
                    -1.0
                } else {
                    0.0
                };
                photo_w * sign - ssim_w * g
            })
            .collect();
        Image::from_raw(rendered.width(), rendered.height(), data).expect("same shape")
    });
    Ok((breakdown, grad))
}

/// `∂(λ_reg·l_reg)/∂log_scale` for one visible Gaussian out of `visible`.
/// Zero while the floor is active.
pub fn reg_grad_log_scale(scale: &Vector3<f64>, visible: usize, cfg: &MapperConfig) -> Vector3<f64> {
    let mut g = Vector3::zeros();
    let k = scale.imin();
    if scale[k] > cfg.reg_floor && visible > 0 {
        // d min(s)/d log s_k = s_k
        g[k] = cfg.lambda_reg * scale[k] / visible as f64;
    }
    g
}
