use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use super::Patch;
use crate::scene::{skew, Intrinsics, Se3};

/// Minimum camera-z of a reprojected point.
pub const MIN_DEPTH: f64 = 1e-6;

/// Homogeneous transfer of a host pixel with inverse depth `d` into frame `j`:
/// `Y = R_ji·K⁻¹[u, v, 1]ᵀ + t_ji·d`, defined up to the scale `1/d`.
pub(crate) fn transfer(
    center: &Vector2<f64>,
    inv_depth: f64,
    relative: &Se3,
    k: &Intrinsics,
) -> (Vector3<f64>, Vector3<f64>) {
    let ray = k.unproject(center);
    let y = relative.rotation * ray + relative.translation * inv_depth;
    (ray, y)
}

/// `∂π(Y)/∂Y` for the pinhole projection.
pub(crate) fn projection_jacobian(k: &Intrinsics, y: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / y.z;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * y.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * y.y * iz * iz,
    )
}

/// Left-perturbation Jacobians of `Y` w.r.t. the target pose, the host pose and
/// the inverse depth.
pub(crate) fn transfer_jacobians(
    ray: &Vector3<f64>,
    y: &Vector3<f64>,
    inv_depth: f64,
    relative: &Se3,
) -> (nalgebra::Matrix3x6<f64>, nalgebra::Matrix3x6<f64>, Vector3<f64>) {
    let r = relative.rotation_matrix();
    let mut d_target = nalgebra::Matrix3x6::zeros();
    d_target
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * inv_depth));
    d_target.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(y)));
    let mut d_host_local = nalgebra::Matrix3x6::zeros();
    d_host_local
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * inv_depth));
    d_host_local.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(ray)));
    let d_host = -r * d_host_local;
    (d_target, d_host, relative.translation)
}

/// Pixel position of a host-frame point `center` with inverse depth `inv_depth`
/// as seen from frame `j`; `None` when it lands behind the camera.
pub fn reproject_point(
    center: &Vector2<f64>,
    inv_depth: f64,
    t_i: &Se3,
    t_j: &Se3,
    k: &Intrinsics,
) -> Option<Vector2<f64>> {
    let relative = t_j.compose(&t_i.inverse());
    let (_, y) = transfer(center, inv_depth, &relative, k);
    if y.z <= MIN_DEPTH {
        return None;
    }
    Some(k.project(&y))
}

/// Center of `patch` reprojected from its host pose `t_i` into frame `t_j`.
pub fn reproject_patch(patch: &Patch, t_i: &Se3, t_j: &Se3, k: &Intrinsics) -> Option<Vector2<f64>> {
    reproject_point(&patch.center, patch.inv_depth, t_i, t_j, k)
}
