//! Trajectory and image-quality metrics.

mod align;
mod metrics;
mod trajectory;

pub use align::{align_sim3, ate_rmse, umeyama, AlignMode, Alignment};
pub use metrics::{mse, psnr, psnr_from_mse, ssim, ssim_with_grad};
pub use trajectory::{associate, Trajectory, ASSOCIATION_WINDOW};

use serde::{Deserialize, Serialize};

/// Summary written as `metrics.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ate_rmse_cm: Option<f64>,
    /// `None` when every evaluated render is pixel-identical to its target.
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub num_frames: usize,
    pub num_gaussians: usize,
    pub fps: f64,
    #[serde(default)]
    pub tracking_lost_frames: usize,
}
