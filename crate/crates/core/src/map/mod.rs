//! Gaussian map lifecycle: seeding from tracked patches, distance-gated
//! insertion, clarity and gradient densification, pruning, and windowed
//! optimization with a smallest-scale regularizer.

mod adam;
mod config;
mod densify;
mod init;
mod insert;
mod loss;
mod mapper;

pub use adam::{BETA1, BETA2, EPSILON};
pub use config::{LearningRates, MapperConfig};
pub use densify::{
    densify_clarity, densify_gradient_and_prune, split_gaussian, DensifyCounts, GradientAccumulator, Origins,
};
pub use init::{
    back_project, default_tau, initialize_from_seeds, initialize_map, keyframe_seeds, neighbor_scale, seed_gaussian,
    seed_points, SeedPoint, LONE_SCALE, MIN_INV_DEPTH, SCALE_NEIGHBOR, SCALE_RANGE,
};
pub use insert::{insert_dynamic, insert_unconditional};
pub use loss::{compute_loss, reg_grad_log_scale, reg_term, LossBreakdown};
pub use mapper::{format_loss_csv, LossRecord, Mapper, LOSS_CSV_HEADER};
