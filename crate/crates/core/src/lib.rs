//! Monocular Gaussian-splatting SLAM.
//!
//! The crate is split along the data flow of the system:
//!
//! - [`scene`]: Gaussians, cameras, rigid transforms and the Gaussian map container.
//! - [`splat`]: tile-based differentiable rasterizer (projection, compositing, backward pass).
//! - [`track`]: patch-graph visual odometry with windowed bundle adjustment.
//! - [`map`]: map initialization, gated insertion, densification and windowed optimization.
//! - [`io`]: dataset loaders, synthetic sequences and artifact writers.
//! - [`eval`]: trajectory alignment, ATE, PSNR and SSIM.
//! - [`cli`]: run configuration and the `run` / `eval` / `synth` commands.

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod map;
pub mod scene;
pub mod splat;
pub mod track;

pub use error::{Error, Result};
