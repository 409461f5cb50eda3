//! Tile-based differentiable Gaussian rasterizer.

mod backward;
mod project;
mod render;

pub use backward::{render_backward, ParamGradients};
pub use project::{project, ProjectedGaussian};
pub use render::{render, RenderOutput};

/// Side length of a square screen tile in pixels.
pub const TILE_SIZE: usize = 16;
/// Gaussians with camera depth at or below this are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass dilation added to every projected covariance.
pub const COV2D_DILATION: f64 = 0.3;
/// Screen footprint in standard deviations.
pub const SIGMA_CUTOFF: f64 = 3.0;
/// A pixel is inside a footprint when `dᵀ Σ⁻¹ d ≤ 9`.
pub const MAHALANOBIS_CUTOFF: f64 = SIGMA_CUTOFF * SIGMA_CUTOFF;
/// Compositing stops once transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Per-pixel cap on composited Gaussians.
pub const MAX_CONTRIBUTORS: usize = 512;
/// Projected covariances with a smaller determinant are skipped.
pub const DET_EPS: f64 = 1e-12;
/// Blend weight above which a pixel counts toward a Gaussian's footprint.
pub const FOOTPRINT_WEIGHT: f64 = 1e-3;
