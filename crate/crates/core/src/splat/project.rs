use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{COV2D_DILATION, DET_EPS, NEAR_PLANE, SIGMA_CUTOFF};
use crate::scene::{sigmoid, CameraFrame, GaussianMap};

/// A Gaussian after the EWA projection into one camera.
#[derive(Clone, Debug)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    /// `J W Σ Wᵀ Jᵀ + 0.3·I`.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    /// Camera-space z.
    pub depth: f64,
    pub source_id: usize,
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// 3σ screen radius from the major eigenvalue.
    pub radius: f64,
    pub(crate) cam_point: Vector3<f64>,
    pub(crate) jacobian: Matrix2x3<f64>,
    pub(crate) cov_cam: Matrix3<f64>,
}

impl ProjectedGaussian {
    /// Inclusive pixel bounding box `(x0, y0, x1, y1)` clipped to the image,
    /// `None` when it misses the image entirely.
    pub fn pixel_bounds(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = (self.mean2d.x - self.radius).ceil().max(0.0);
        let y0 = (self.mean2d.y - self.radius).ceil().max(0.0);
        let x1 = (self.mean2d.x + self.radius).floor().min(width as f64 - 1.0);
        let y1 = (self.mean2d.y + self.radius).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

/// Projection Jacobian of the pinhole model at camera point `t`.
pub(crate) fn pinhole_jacobian(fx: f64, fy: f64, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        fx * iz,
        0.0,
        -fx * t.x * iz * iz,
        0.0,
        fy * iz,
        -fy * t.y * iz * iz,
    )
}

/// Projects every Gaussian of `map` into `cam`, dropping those behind the near
/// plane, with a degenerate footprint, or whose 3σ box misses the image.
pub fn project(map: &GaussianMap, cam: &CameraFrame) -> Vec<ProjectedGaussian> {
    let k = &cam.intrinsics;
    let w = cam.pose.rotation_matrix();
    let mut out = Vec::new();
    for i in 0..map.len() {
        let g = map.get(i);
        let t = cam.pose.transform_point(&g.mean);
        if t.z <= NEAR_PLANE {
            continue;
        }
        let jac = pinhole_jacobian(k.fx, k.fy, &t);
        let cov_cam = w * g.covariance() * w.transpose();
        let cov2d = jac * cov_cam * jac.transpose() + Matrix2::identity() * COV2D_DILATION;
        let det = cov2d.determinant();
        if !(det >= DET_EPS) {
            continue;
        }
        let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
        let half_trace = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
        let lambda_max = half_trace + (half_trace * half_trace - det).max(0.0).sqrt();
        let p = ProjectedGaussian {
            mean2d: k.project(&t),
            cov2d,
            conic,
            depth: t.z,
            source_id: i,
            opacity: sigmoid(g.opacity_logit),
            color: g.color,
            radius: SIGMA_CUTOFF * lambda_max.sqrt(),
            cam_point: t,
            jacobian: jac,
            cov_cam,
        };
        if p.pixel_bounds(k.width, k.height).is_none() {
            continue;
        }
        out.push(p);
    }
    out
}
