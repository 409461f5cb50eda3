//! Patch-graph visual odometry.

mod ba;
mod correspond;
pub(crate) mod patch;
mod reproject;
mod tracker;

pub use ba::{apply_scale, bundle_adjust, graph_cost, BaConfig, BaReport, PatchGraphEdge, ScaleGauge};
pub use correspond::{compute_correspondence, zncc, CorrespondenceConfig};
pub use patch::{sample_patches, Patch, DEFAULT_INV_DEPTH, NMS_RADIUS};
pub use reproject::{reproject_patch, reproject_point};
pub use tracker::{Keyframe, TrackOutput, TrackerConfig, TrackerState};
