use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gslam::cli::{cmd_eval, cmd_run, cmd_synth, format_timing_table, EvalInput, RunConfig, RunOverrides};
use gslam::eval::AlignMode;
use gslam::io::{DatasetFormat, SyntheticScene, SyntheticTrajectory};

#[derive(Parser)]
#[command(name = "gslam", version, about = "Monocular Gaussian-splatting SLAM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tum,
    Replica,
    Synthetic,
}

impl From<Format> for DatasetFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tum => DatasetFormat::Tum,
            Format::Replica => DatasetFormat::Replica,
            Format::Synthetic => DatasetFormat::Synthetic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Align {
    None,
    Se3,
    Sim3,
}

impl From<Align> for AlignMode {
    fn from(a: Align) -> Self {
        match a {
            Align::None => AlignMode::None,
            Align::Se3 => AlignMode::Se3,
            Align::Sim3 => AlignMode::Sim3,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Track and map a sequence, writing trajectory, map, metrics and renders.
    Run {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// TOML run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Render every N-th frame (0 disables).
        #[arg(long)]
        render_every: Option<usize>,
    },
    /// ATE between two TUM trajectories, or PSNR/SSIM between render folders.
    Eval {
        #[arg(long, requires = "gt", conflicts_with_all = ["render_dir", "gt_dir"])]
        est: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sim3")]
        align: Align,
        #[arg(long, requires = "gt_dir")]
        render_dir: Option<PathBuf>,
        #[arg(long)]
        gt_dir: Option<PathBuf>,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Materialize a synthetic sequence usable with `run --format synthetic`.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SyntheticScene::default().n_gaussians)]
        n_gaussians: usize,
        #[arg(long, default_value_t = SyntheticScene::default().n_frames)]
        n_frames: usize,
        #[arg(long, default_value_t = SyntheticScene::default().width)]
        width: usize,
        #[arg(long, default_value_t = SyntheticScene::default().height)]
        height: usize,
        /// Traverse the orbit arc this many times (back and forth).
        #[arg(long, default_value_t = 1)]
        passes: usize,
    },
}

fn run(cli: Cli) -> gslam::Result<()> {
    match cli.command {
        Command::Run {
            dataset,
            format,
            config,
            out,
            seed,
            render_every,
        } => {
            let overrides = RunOverrides {
                dataset,
                format: format.map(Into::into),
                out,
                seed,
                render_every,
            };
            let cfg = RunConfig::resolve(config.as_deref(), &overrides)?;
            let report = cmd_run(&cfg)?;
            print!("{}", format_timing_table(&report.timing));
            println!("{}", serde_json::to_string_pretty(&report.metrics).expect("serializable"));
            println!("outputs written to {}", cfg.out.display());
        }
        Command::Eval {
            est,
            gt,
            align,
            render_dir,
            gt_dir,
            out,
        } => {
            let input = match (est, gt, render_dir, gt_dir) {
                (Some(est), Some(gt), _, _) => EvalInput::Trajectories {
                    est,
                    gt,
                    align: align.into(),
                },
                (_, _, Some(render_dir), Some(gt_dir)) => EvalInput::Renders { render_dir, gt_dir },
                _ => {
                    return Err(gslam::Error::Config(
                        "eval needs --est with --gt, or --render-dir with --gt-dir".into(),
                    ))
                }
            };
            let report = cmd_eval(&input)?;
            let json = serde_json::to_string_pretty(&report).expect("serializable");
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(&path, json).map_err(|e| gslam::Error::Io { path, source: e })?;
            }
        }
        Command::Synth {
            out,
            seed,
            n_gaussians,
            n_frames,
            width,
            height,
            passes,
        } => {
            let mut scene = SyntheticScene {
                seed,
                n_gaussians,
                n_frames,
                width,
                height,
                ..Default::default()
            };
            if let SyntheticTrajectory::Orbit { passes: p, .. } = &mut scene.trajectory {
                *p = passes;
            }
            cmd_synth(&scene, &out)?;
            println!("wrote {n_frames} frames to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
