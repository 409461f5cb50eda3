//! Classical stand-in for a learned correspondence update: inverse-compositional
//! Lucas–Kanade on the patch template, scored by ZNCC.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::Patch;
use crate::scene::GrayImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrespondenceConfig {
    /// Pixels around the prediction that the observation may move.
    pub search_radius: f64,
    pub iterations: usize,
    /// Stop when the update is shorter than this, pixels.
    pub convergence: f64,
    /// Observations scoring below this get zero weight.
    pub min_zncc: f64,
}

impl Default for CorrespondenceConfig {
    fn default() -> Self {
        Self {
            search_radius: 8.0,
            iterations: 15,
            convergence: 0.03,
            min_zncc: 0.3,
        }
    }
}

/// Template gradient, its Gauss–Newton Hessian and per-axis confidence,
/// precomputed once per patch.
struct Template<'a> {
    values: &'a [f64],
    grads: Vec<Vector2<f64>>,
    hessian_inv: Matrix2<f64>,
    /// Per-axis information `1/(H⁻¹)_aa` relative to the largest eigenvalue.
    axis_confidence: Vector2<f64>,
}

impl<'a> Template<'a> {
    fn new(patch: &'a Patch) -> Option<Self> {
        let p = patch.size;
        let t = &patch.template;
        let at = |x: usize, y: usize| t[y * p + x];
        let mut grads = Vec::with_capacity(p * p);
        for y in 0..p {
            for x in 0..p {
                // one-sided at the template border
                let (x0, x1) = (x.saturating_sub(1), (x + 1).min(p - 1));
                let (y0, y1) = (y.saturating_sub(1), (y + 1).min(p - 1));
                grads.push(Vector2::new(
                    (at(x1, y) - at(x0, y)) / (x1 - x0) as f64,
                    (at(x, y1) - at(x, y0)) / (y1 - y0) as f64,
                ));
            }
        }
        let h: Matrix2<f64> = grads.iter().map(|g| g * g.transpose()).sum();
        let eig = h.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 1e-10) || !(lo > 1e-12 * hi) {
            return None;
        }
        let hessian_inv = h.try_inverse()?;
        Some(Self {
            values: t,
            grads,
            axis_confidence: Vector2::new(1.0 / hessian_inv[(0, 0)], 1.0 / hessian_inv[(1, 1)]) / hi,
            hessian_inv,
        })
    }
}

fn sample_window(img: &GrayImage, center: &Vector2<f64>, size: usize, out: &mut Vec<f64>) {
    let r = (size / 2) as f64;
    out.clear();
    for dy in 0..size {
        for dx in 0..size {
            out.push(img.sample(center.x - r + dx as f64, center.y - r + dy as f64));
        }
    }
}

/// Zero-mean normalized cross-correlation; `None` for a flat window.
pub fn zncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let denom = (saa * sbb).sqrt();
    if !(denom > 1e-12) {
        return None;
    }
    Some(sab / denom)
}

fn inside(img: &GrayImage, c: &Vector2<f64>, margin: f64) -> bool {
    c.x >= margin && c.y >= margin && c.x <= img.width() as f64 - 1.0 - margin && c.y <= img.height() as f64 - 1.0 - margin
}

/// Iterates translation-only IC-LK from `start`. Returns the converged center.
fn align(
    tpl: &Template,
    img: &GrayImage,
    start: Vector2<f64>,
    anchor: &Vector2<f64>,
    size: usize,
    cfg: &CorrespondenceConfig,
) -> Option<Vector2<f64>> {
    let margin = (size / 2) as f64 + 1.0;
    let mut c = start;
    let mut window = Vec::with_capacity(size * size);
    for _ in 0..cfg.iterations {
        if !inside(img, &c, margin) {
            return None;
        }
        sample_window(img, &c, size, &mut window);
        let mut b = Vector2::zeros();
        for ((w, t), g) in window.iter().zip(tpl.values).zip(&tpl.grads) {
            b += g * (w - t);
        }
        let step = tpl.hessian_inv * b;
        c -= step;
        if !c.iter().all(|v| v.is_finite()) || (c - anchor).norm() > cfg.search_radius {
            return None;
        }
        if step.norm() < cfg.convergence {
            return inside(img, &c, margin).then_some(c);
        }
    }
    None
}

fn score(tpl: &Template, img: &GrayImage, c: &Vector2<f64>, size: usize) -> Option<f64> {
    let mut window = Vec::with_capacity(size * size);
    sample_window(img, c, size, &mut window);
    zncc(tpl.values, &window)
}

/// Integer-offset ZNCC search around the prediction.
fn exhaustive(tpl: &Template, img: &GrayImage, prediction: &Vector2<f64>, size: usize, radius: f64) -> Option<Vector2<f64>> {
    let margin = (size / 2) as f64 + 1.0;
    let r = radius.floor() as i64;
    let mut best: Option<(f64, Vector2<f64>)> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let off = Vector2::new(dx as f64, dy as f64);
            if off.norm() > radius {
                continue;
            }
            let c = prediction + off;
            if !inside(img, &c, margin) {
                continue;
            }
            if let Some(s) = score(tpl, img, &c, size) {
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, c));
                }
            }
        }
    }
    best.map(|(_, c)| c)
}

/// ZNCC above which the alignment from the prediction is trusted without a search.
const ACCEPT_ZNCC: f64 = 0.9;

/// Locates `patch` in `target` near `prediction`.
///
/// Returns the refined center and a per-axis confidence in `[0, 1]`: the ZNCC
/// score times the template's per-axis information `1/(H⁻¹)_aa` over the
/// largest structure-tensor eigenvalue. This is 1 for an isotropic template,
/// never below the inverse condition number, and near 0 along an edge.
/// Textureless templates, divergent alignments and poor matches get `(0, 0)`.
pub fn compute_correspondence(
    patch: &Patch,
    target: &GrayImage,
    prediction: &Vector2<f64>,
    cfg: &CorrespondenceConfig,
) -> (Vector2<f64>, Vector2<f64>) {
    let reject = (*prediction, Vector2::zeros());
    let Some(tpl) = Template::new(patch) else {
        return reject;
    };
    let size = patch.size;
    let mut found = align(&tpl, target, *prediction, prediction, size, cfg)
        .and_then(|c| score(&tpl, target, &c, size).map(|s| (c, s)));
    if found.is_none_or(|(_, s)| s < ACCEPT_ZNCC) {
        let refined = exhaustive(&tpl, target, prediction, size, cfg.search_radius)
            .and_then(|c0| align(&tpl, target, c0, prediction, size, cfg))
            .and_then(|c| score(&tpl, target, &c, size).map(|s| (c, s)));
        if let Some((c, s)) = refined {
            if found.is_none_or(|(_, s0)| s > s0) {
                found = Some((c, s));
            }
        }
    }
    match found {
        Some((c, s)) if s >= cfg.min_zncc => {
            let w = (s.clamp(0.0, 1.0) * tpl.axis_confidence).map(|v| v.clamp(0.0, 1.0));
            (c, w)
        }
        _ => reject,
    }
}
