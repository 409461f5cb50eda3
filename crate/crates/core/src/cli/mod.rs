//! Run configuration and the `run`, `eval` and `synth` commands.

mod config;
mod eval_cmd;
mod run;
mod synth;

pub use config::{DatasetConfig, RunConfig, RunOverrides};
pub use eval_cmd::{cmd_eval, EvalInput, EvalReport};
pub use run::{
    cmd_run, format_timing_table, MapGrowth, ResolvedValues, RunMetadata, RunReport, Timing, LOSS_FILE, MAP_FILE,
    METADATA_FILE, METRICS_FILE, RENDER_DIR, TRAJECTORY_FILE,
};
pub use synth::cmd_synth;
