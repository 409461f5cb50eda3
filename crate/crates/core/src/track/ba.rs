//! Windowed bundle adjustment over poses and patch inverse depths.
//!
//! Residuals are weighted reprojection errors of patch centers. Inverse depths
//! are eliminated with a Schur complement; the reduced pose system is solved
//! with Levenberg–Marquardt damping and steps that raise the cost are rejected.

use nalgebra::{DMatrix, DVector, Matrix2x6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use super::reproject::{projection_jacobian, transfer, transfer_jacobians, MIN_DEPTH};
use super::Patch;
use crate::scene::{Intrinsics, Se3};

/// One observation of a patch in a window frame. `host` and `target` index the
/// pose slice handed to [`bundle_adjust`]; `patch` indexes the patch slice.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGraphEdge {
    pub host: usize,
    pub target: usize,
    pub patch: usize,
    pub observation: Vector2<f64>,
    /// Diagonal confidence, each component in `[0, 1]`.
    pub weight: Vector2<f64>,
}

/// How the similarity gauge of a monocular window is pinned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScaleGauge {
    /// Hold the translation norm of pose `k` relative to pose 0.
    RelativeTranslation(usize),
    /// Hold the mean inverse depth of the optimized patches.
    MeanInverseDepth,
    /// Scale is observable (or handled by the caller).
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaConfig {
    pub iterations: usize,
    /// Initial damping added to the pose Hessian diagonal.
    pub damping: f64,
    /// Damping beyond which an iteration gives up.
    pub max_damping: f64,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            damping: 1e-4,
            max_damping: 1e2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BaReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub accepted_steps: usize,
    /// Edges that contributed (nonzero weight, in front of both cameras).
    pub active_edges: usize,
}

impl BaReport {
    pub fn mean_final_cost(&self) -> f64 {
        if self.active_edges == 0 {
            0.0
        } else {
            self.final_cost / self.active_edges as f64
        }
    }
}

fn relative(poses: &[Se3], e: &PatchGraphEdge) -> Se3 {
    poses[e.target].compose(&poses[e.host].inverse())
}

fn edge_residual(k: &Intrinsics, poses: &[Se3], patches: &[Patch], e: &PatchGraphEdge) -> Option<Vector2<f64>> {
    let p = &patches[e.patch];
    let (_, y) = transfer(&p.center, p.inv_depth, &relative(poses, e), k);
    (y.z > MIN_DEPTH).then(|| k.project(&y) - e.observation)
}

/// Weighted squared reprojection error summed over edges, and the number of
/// edges that contributed.
pub fn graph_cost(k: &Intrinsics, poses: &[Se3], patches: &[Patch], edges: &[PatchGraphEdge]) -> (f64, usize) {
    let mut cost = 0.0;
    let mut n = 0;
    for e in edges {
        if e.weight == Vector2::zeros() || e.host == e.target {
            continue;
        }
        if let Some(r) = edge_residual(k, poses, patches, e) {
            cost += e.weight.x * r.x * r.x + e.weight.y * r.y * r.y;
            n += 1;
        }
    }
    (cost, n)
}

/// Rescales the world by `s` about the camera center of pose 0, which itself
/// stays bit-identical; inverse depths scale by `1/s`.
pub fn apply_scale(poses: &mut [Se3], patches: &mut [Patch], s: f64) {
    if s == 1.0 || poses.is_empty() {
        return;
    }
    let c = poses[0].center().coords;
    for t in poses.iter_mut().skip(1) {
        t.translation = t.translation * s - (t.rotation * c) * (1.0 - s);
    }
    for p in patches.iter_mut() {
        p.inv_depth /= s;
    }
}

fn relative_translation_norm(poses: &[Se3], k: usize) -> f64 {
    poses[k].compose(&poses[0].inverse()).translation.norm()
}

fn mean_inv_depth(patches: &[Patch], used: &[bool]) -> f64 {
    let (sum, n) = patches
        .iter()
        .zip(used)
        .filter(|(_, u)| **u)
        .fold((0.0, 0usize), |(s, n), (p, _)| (s + p.inv_depth, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scale factor restoring the gauge quantity measured before the step.
fn gauge_factor(gauge: ScaleGauge, reference: f64, poses: &[Se3], patches: &[Patch], used: &[bool]) -> f64 {
    match gauge {
        ScaleGauge::RelativeTranslation(k) => {
            let now = relative_translation_norm(poses, k);
            if now > 1e-12 && reference > 1e-12 {
                reference / now
            } else {
                1.0
            }
        }
        ScaleGauge::MeanInverseDepth => {
            let now = mean_inv_depth(patches, used);
            if now > 1e-12 && reference > 1e-12 {
                now / reference
            } else {
                1.0
            }
        }
        ScaleGauge::Free => 1.0,
    }
}

/// Runs Gauss–Newton/Levenberg–Marquardt on the patch graph.
///
/// Pose 0 is held fixed and is never written; `gauge` pins the remaining
/// similarity freedom. Inverse depths of patches referenced by an edge are
/// optimized and kept non-negative. Each accepted iteration strictly lowers
/// the weighted cost; a rejected or singular step raises the damping ×10 and
/// the run stops once the damping exceeds `max_damping`.
pub fn bundle_adjust(
    k: &Intrinsics,
    poses: &mut [Se3],
    patches: &mut [Patch],
    edges: &[PatchGraphEdge],
    gauge: ScaleGauge,
    cfg: &BaConfig,
) -> BaReport {
    let (initial_cost, active_edges) = graph_cost(k, poses, patches, edges);
    let mut report = BaReport {
        initial_cost,
        final_cost: initial_cost,
        accepted_steps: 0,
        active_edges,
    };
    let m = poses.len().saturating_sub(1);
    if cfg.iterations == 0 || active_edges == 0 || m == 0 {
        return report;
    }

    let mut used = vec![false; patches.len()];
    for e in edges {
        if e.weight != Vector2::zeros() && e.host != e.target {
            used[e.patch] = true;
        }
    }
    let depth_slot: Vec<Option<usize>> = {
        let mut next = 0;
        used.iter()
            .map(|u| {
                u.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let nd = used.iter().filter(|u| **u).count();
    let gauge_ref = match gauge {
        ScaleGauge::RelativeTranslation(i) if i < poses.len() => relative_translation_norm(poses, i),
        ScaleGauge::MeanInverseDepth => mean_inv_depth(patches, &used),
        _ => 0.0,
    };

    let mut cost = initial_cost;
    let mut lambda = cfg.damping;
    let dim = 6 * m;
    for _ in 0..cfg.iterations {
        // Normal equations: [B E; Eᵀ C] [Δξ; Δd] = −[g; h]
        let mut b = DMatrix::<f64>::zeros(dim, dim);
        let mut e_mat = DMatrix::<f64>::zeros(dim, nd);
        let mut c = vec![0.0; nd];
        let mut g = DVector::<f64>::zeros(dim);
        let mut hd = vec![0.0; nd];
        for e in edges {
            if e.weight == Vector2::zeros() || e.host == e.target {
                continue;
            }
            let p = &patches[e.patch];
            let rel = relative(poses, e);
            let (ray, y) = transfer(&p.center, p.inv_depth, &rel, k);
            if y.z <= MIN_DEPTH {
                continue;
            }
            let r = k.project(&y) - e.observation;
            let pj = projection_jacobian(k, &y);
            let (jt, jh, jd) = transfer_jacobians(&ray, &y, p.inv_depth, &rel);
            let blocks: [(usize, Matrix2x6<f64>); 2] = [(e.target, pj * jt), (e.host, pj * jh)];
            let jdep = pj * jd;
            let wr = Vector2::new(e.weight.x * r.x, e.weight.y * r.y);
            let wjd = Vector2::new(e.weight.x * jdep.x, e.weight.y * jdep.y);
            let slot = depth_slot[e.patch].expect("used patch has a slot");
            c[slot] += jdep.dot(&wjd);
            hd[slot] += jdep.dot(&wr);
            for (pa, ja) in &blocks {
                if *pa == 0 {
                    continue;
                }
                let oa = 6 * (pa - 1);
                let mut wja = *ja;
                wja.row_mut(0).scale_mut(e.weight.x);
                wja.row_mut(1).scale_mut(e.weight.y);
                let ga = ja.transpose() * wr;
                for i in 0..6 {
                    g[oa + i] += ga[i];
                }
                let ea = ja.transpose() * wjd;
                for i in 0..6 {
                    e_mat[(oa + i, slot)] += ea[i];
                }
                for (pb, jb) in &blocks {
                    if *pb == 0 {
                        continue;
                    }
                    let ob = 6 * (pb - 1);
                    let hab = wja.transpose() * jb;
                    for i in 0..6 {
                        for j in 0..6 {
                            b[(oa + i, ob + j)] += hab[(i, j)];
                        }
                    }
                }
            }
        }

        // depth blocks get a tiny ridge so unobservable depths stay put
        let c_inv: Vec<f64> = c.iter().map(|v| 1.0 / (v + 1e-9 * (1.0 + v))).collect();
        let mut step: Option<(DVector<f64>, Vec<f64>)> = None;
        while lambda <= cfg.max_damping {
            let mut s = b.clone();
            let mut rhs = -g.clone();
            for j in 0..nd {
                let col = e_mat.column(j);
                s.ger(-c_inv[j], &col, &col, 1.0);
                rhs.axpy(c_inv[j] * hd[j], &col, 1.0);
            }
            for i in 0..dim {
                s[(i, i)] += lambda;
            }
            let Some(chol) = s.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let dxi = chol.solve(&rhs);
            let etx = e_mat.transpose() * &dxi;
            let dd: Vec<f64> = (0..nd).map(|j| -c_inv[j] * (hd[j] + etx[j])).collect();

            let mut cand_poses = poses.to_vec();
            for (i, t) in cand_poses.iter_mut().enumerate().skip(1) {
                let xi = Vector6::from_iterator(dxi.rows(6 * (i - 1), 6).iter().copied());
                *t = t.retract_left(&xi);
            }
            let mut cand_patches = patches.to_vec();
            for (p, s) in cand_patches.iter_mut().zip(&depth_slot) {
                if let Some(j) = s {
                    p.inv_depth = (p.inv_depth + dd[*j]).max(0.0);
                }
            }
            let factor = gauge_factor(gauge, gauge_ref, &cand_poses, &cand_patches, &used);
            apply_scale(&mut cand_poses, &mut cand_patches, factor);
            let (new_cost, _) = graph_cost(k, &cand_poses, &cand_patches, edges);
            if new_cost.is_finite() && new_cost < cost {
                poses[1..].clone_from_slice(&cand_poses[1..]);
                for (p, cand) in patches.iter_mut().zip(cand_patches) {
                    p.inv_depth = cand.inv_depth;
                }
                step = Some((dxi, dd));
                cost = new_cost;
                lambda = (lambda / 10.0).max(cfg.damping);
                break;
            }
            lambda *= 10.0;
        }
        if step.is_none() {
            break;
        }
        report.accepted_steps += 1;
    }
    report.final_cost = cost;
    report
}
