use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::eval::{ate_rmse, psnr, ssim, AlignMode, MetricsReport, Trajectory};
use crate::io::{load_dataset, write_map_ply, write_png, write_trajectory, SequenceSpec};
use crate::map::{format_loss_csv, keyframe_seeds, Mapper};
use crate::scene::{CameraFrame, GaussianMap, Se3};
use crate::splat::render;
use crate::track::{Keyframe, TrackerState};
use crate::{Error, Result};

pub const TRAJECTORY_FILE: &str = "traj_est.txt";
pub const MAP_FILE: &str = "map.ply";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const METADATA_FILE: &str = "run_metadata.json";
pub const RENDER_DIR: &str = "renders";

/// Per-stage wall-clock accounting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub frames: usize,
    pub tracking_ms_per_frame: f64,
    pub mapping_ms_per_frame: f64,
    pub wall_s: f64,
    /// Frames over end-to-end wall clock.
    pub fps: f64,
}

impl Timing {
    fn new(frames: usize, tracking: Duration, mapping: Duration, wall: Duration) -> Self {
        let per = |d: Duration| if frames == 0 { 0.0 } else { d.as_secs_f64() * 1e3 / frames as f64 };
        let wall_s = wall.as_secs_f64();
        Self {
            frames,
            tracking_ms_per_frame: per(tracking),
            mapping_ms_per_frame: per(mapping),
            wall_s,
            fps: if wall_s > 0.0 { frames as f64 / wall_s } else { 0.0 },
        }
    }
}

/// Tracking/mapping time per frame and FPS as a markdown table.
pub fn format_timing_table(t: &Timing) -> String {
    format!(
        "| Method | Tracking/Frame | Mapping/Frame | FPS |\n\
         |--------|----------------|---------------|-----|\n\
         | gslam  | {:.1} ms | {:.1} ms | {:.2} |\n",
        t.tracking_ms_per_frame, t.mapping_ms_per_frame, t.fps
    )
}

/// Where the map's Gaussians came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapGrowth {
    pub initialized: usize,
    pub inserted: usize,
    pub clarity_split: usize,
    pub gradient_cloned: usize,
    pub gradient_split: usize,
    pub pruned: usize,
}

/// Values decided during the run rather than configured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolvedValues {
    pub tau: Option<f64>,
    pub sigma_split: Option<f64>,
    pub scene_extent: Option<f64>,
    pub keyframes: usize,
    pub map_initialized_at_frame: Option<usize>,
    pub growth: MapGrowth,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: RunConfig,
    pub resolved: ResolvedValues,
    pub timing: Timing,
    pub dataset_frames: usize,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub metrics: MetricsReport,
    pub timing: Timing,
    pub resolved: ResolvedValues,
}

/// Keyframe-driven mapping on top of the tracker's window.
struct Pipeline {
    mapper: Mapper,
    insert_lag: usize,
    /// Newest keyframe whose patches reached the map.
    inserted_upto: Option<usize>,
    initialized_at: Option<usize>,
    growth: MapGrowth,
}

impl Pipeline {
    fn window_frames(keyframes: &[Keyframe]) -> Vec<CameraFrame> {
        keyframes.iter().map(|k| k.frame.clone()).collect()
    }

    fn insert_pending(&mut self, keyframes: &[Keyframe], upto: usize) -> usize {
        let mut added = 0;
        for kf in &keyframes[..upto] {
            if self.inserted_upto.is_some_and(|id| kf.frame_id() <= id) {
                continue;
            }
            added += self.mapper.insert(&keyframe_seeds(kf));
            self.inserted_upto = Some(kf.frame_id());
        }
        self.growth.inserted += added;
        added
    }

    fn initialize(&mut self, keyframes: &[Keyframe], frame_id: usize) -> Result<()> {
        let n = self.mapper.initialize(keyframes)?;
        self.growth.initialized = n;
        self.inserted_upto = keyframes.last().map(Keyframe::frame_id);
        self.initialized_at = Some(frame_id);
        log::info!("map initialized with {n} Gaussians at frame {frame_id}");
        Ok(())
    }

    fn on_keyframe(&mut self, tracker: &TrackerState, frame_id: usize) -> Result<()> {
        let kfs = tracker.keyframes();
        if !self.mapper.is_initialized() {
            if !tracker.is_initialized() {
                return Ok(());
            }
            self.initialize(kfs, frame_id)?;
        } else {
            let upto = kfs.len().saturating_sub(self.insert_lag);
            self.insert_pending(kfs, upto);
            let newest = &kfs.last().expect("a keyframe was just added").frame;
            self.growth.clarity_split += self.mapper.densify_clarity(newest)?;
        }
        let iters = self.mapper.config().opt_iters_per_keyframe;
        self.mapper.optimize_window(&Self::window_frames(kfs), iters)?;
        Ok(())
    }

    /// Inserts what the lag held back (or initializes a short sequence) and
    /// refines the final window once.
    fn finish(&mut self, tracker: &TrackerState, last_frame: usize) -> Result<()> {
        let kfs = tracker.keyframes();
        if kfs.is_empty() {
            return Ok(());
        }
        if !self.mapper.is_initialized() {
            if let Err(e) = self.initialize(kfs, last_frame) {
                log::warn!("no map could be built: {e}");
                return Ok(());
            }
        } else if self.insert_pending(kfs, kfs.len()) == 0 {
            return Ok(());
        }
        let iters = self.mapper.config().opt_iters_per_keyframe;
        self.mapper.optimize_window(&Self::window_frames(kfs), iters)?;
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Mean PSNR (finite values only) and SSIM of renders at the given frames;
/// writes each render as a PNG.
fn evaluate_renders(
    seq: &SequenceSpec,
    map: &GaussianMap,
    background: &Vector3<f64>,
    poses: &[(usize, Se3)],
    render_dir: &Path,
) -> Result<(Option<f64>, Option<f64>)> {
    fs::create_dir_all(render_dir).map_err(|e| Error::io(render_dir, e))?;
    let (mut psnrs, mut ssims) = (Vec::new(), Vec::new());
    for (id, pose) in poses {
        let mut frame = seq.load_frame(*id)?;
        frame.pose = pose.clone();
        let out = render(map, &frame, background);
        write_png(&out.color, &render_dir.join(format!("{id:06}.png")))?;
        psnrs.push(psnr(&out.color, &frame.image)?);
        ssims.push(ssim(&out.color, &frame.image)?);
    }
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok((mean(psnrs.into_iter().filter(|p| p.is_finite()).collect()), mean(ssims)))
}

/// Runs tracking and mapping over the configured dataset and writes every
/// artifact into `cfg.out`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let seq = load_dataset(cfg.dataset.format, &cfg.dataset.root, cfg.dataset.intrinsics)?;
    if seq.is_empty() {
        return Err(Error::Dataset(format!("{} contains no frames", cfg.dataset.root.display())));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;

    let mut tracker_cfg = cfg.tracker.clone();
    tracker_cfg.seed = cfg.seed;
    let mut tracker = TrackerState::new(tracker_cfg)?;
    let mut pipe = Pipeline {
        mapper: Mapper::new(cfg.mapper.clone(), cfg.seed)?,
        insert_lag: cfg.insert_lag,
        inserted_upto: None,
        initialized_at: None,
        growth: MapGrowth::default(),
    };
    let (mut t_track, mut t_map) = (Duration::ZERO, Duration::ZERO);
    let mut tracked = Vec::new();
    let mut keyframe_ids = HashSet::new();
    let mut lost = 0;

    for frame in seq.stream() {
        let id = frame.frame_id;
        let t0 = Instant::now();
        let out = tracker.track_frame(&frame)?;
        t_track += t0.elapsed();
        tracked.push(id);
        if out.tracking_lost {
            lost += 1;
            log::warn!("tracking lost at frame {id}; continuing with the predicted pose");
        }
        if out.is_keyframe {
            keyframe_ids.insert(id);
            let t0 = Instant::now();
            pipe.on_keyframe(&tracker, id)?;
            t_map += t0.elapsed();
        }
    }
    if tracked.is_empty() {
        return Err(Error::Dataset("no frame could be decoded".into()));
    }
    let t0 = Instant::now();
    pipe.finish(&tracker, *tracked.last().expect("nonempty"))?;
    t_map += t0.elapsed();

    let est_w2c = tracker.trajectory();
    let est = Trajectory::from_world_to_camera(est_w2c.clone())?;
    write_trajectory(&est, &cfg.out.join(TRAJECTORY_FILE))?;
    let ate = match &seq.ground_truth {
        Some(gt) => match ate_rmse(&est, gt, AlignMode::Sim3) {
            Ok(a) => Some(a),
            Err(e) => {
                log::warn!("ATE not computed: {e}");
                None
            }
        },
        None => None,
    };

    let mapper = &pipe.mapper;
    let background = Vector3::from(cfg.mapper.background);
    let (mut psnr_db, mut ssim_v) = (None, None);
    if cfg.render_every > 0 && !mapper.map().is_empty() {
        let picked: Vec<(usize, Se3)> = tracked
            .iter()
            .zip(&est_w2c)
            .filter(|(id, _)| *id % cfg.render_every == 0)
            .map(|(id, (_, pose))| (*id, pose.clone()))
            .collect();
        let held_out: Vec<_> = picked.iter().filter(|(id, _)| !keyframe_ids.contains(id)).cloned().collect();
        let eval_set = if held_out.is_empty() { &picked } else { &held_out };
        let render_dir = cfg.out.join(RENDER_DIR);
        (psnr_db, ssim_v) = evaluate_renders(&seq, mapper.map(), &background, eval_set, &render_dir)?;
    }

    let timing = Timing::new(tracked.len(), t_track, t_map, start.elapsed());
    let metrics = MetricsReport {
        ate_rmse_cm: ate,
        psnr_db,
        ssim: ssim_v,
        num_frames: tracked.len(),
        num_gaussians: mapper.map().len(),
        fps: timing.fps,
        tracking_lost_frames: lost,
    };
    let resolved = ResolvedValues {
        tau: mapper.is_initialized().then(|| mapper.tau()),
        sigma_split: Some(cfg.mapper.sigma_split_for(seq.intrinsics.width, seq.intrinsics.height)),
        scene_extent: mapper.is_initialized().then(|| mapper.extent()),
        keyframes: tracker.keyframe_count(),
        map_initialized_at_frame: pipe.initialized_at,
        growth: MapGrowth {
            gradient_cloned: mapper.densify_log().iter().map(|c| c.cloned).sum(),
            gradient_split: mapper.densify_log().iter().map(|c| c.split).sum(),
            pruned: mapper.densify_log().iter().map(|c| c.pruned).sum(),
            ..pipe.growth.clone()
        },
    };
    let mut effective = cfg.clone();
    effective.tracker.seed = cfg.seed;
    let metadata = RunMetadata {
        config: effective,
        resolved: resolved.clone(),
        timing: timing.clone(),
        dataset_frames: seq.len(),
    };

    write_map_ply(mapper.map(), &cfg.out.join(MAP_FILE))?;
    write_text(&cfg.out.join(LOSS_FILE), &format_loss_csv(mapper.loss_records()))?;
    write_text(&cfg.out.join(METRICS_FILE), &to_json(&metrics))?;
    write_text(&cfg.out.join(METADATA_FILE), &to_json(&metadata))?;
    Ok(RunReport {
        metrics,
        timing,
        resolved,
    })
}
