//! Geometric primitives: Gaussians, cameras, rigid transforms and the map.

mod camera;
mod gaussian;
pub mod grid;
mod map;
mod se3;

pub use camera::{CameraFrame, GrayImage, Image, Intrinsics};
pub use gaussian::{
    build_covariance, logit, quat_matrix_vjp, quat_to_matrix, sigmoid, Covariance3D, Gaussian3D,
    UNIT_QUATERNION_TOL,
};
pub use map::{GaussianMap, ParamsMut};
pub use se3::{skew, Se3, Sim3};
