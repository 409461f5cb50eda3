use std::collections::HashMap;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ba::{bundle_adjust, BaConfig, BaReport, PatchGraphEdge, ScaleGauge};
use super::correspond::{compute_correspondence, CorrespondenceConfig};
use super::patch::{sample_patches, Patch, DEFAULT_INV_DEPTH};
use super::reproject::reproject_patch;
use crate::scene::{CameraFrame, GrayImage, Se3};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub patches_per_keyframe: usize,
    /// Odd patch side length, pixels.
    pub patch_size: usize,
    /// Keyframes kept in the optimization window.
    pub window: usize,
    /// Keyframes after which the tracker reports itself initialized.
    pub init_keyframes: usize,
    /// Mean patch flow since the last keyframe that triggers a new one, pixels.
    pub keyframe_flow: f64,
    /// Fewer weighted edges than this into a frame means tracking is lost.
    pub min_edges: usize,
    pub correspondence: CorrespondenceConfig,
    pub ba: BaConfig,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            patches_per_keyframe: 96,
            patch_size: 9,
            window: 10,
            init_keyframes: 8,
            keyframe_flow: 2.5,
            min_edges: 8,
            correspondence: CorrespondenceConfig::default(),
            ba: BaConfig::default(),
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 {
            return Err(Error::Config(format!("patch_size must be odd, got {}", self.patch_size)));
        }
        if self.window < 2 {
            return Err(Error::Config("window must hold at least 2 keyframes".into()));
        }
        if self.init_keyframes == 0 {
            return Err(Error::Config("init_keyframes must be >= 1".into()));
        }
        Ok(())
    }
}

/// A keyframe in the window. `frame.pose` is the current estimate.
#[derive(Clone, Debug)]
pub struct Keyframe {
    pub frame: CameraFrame,
    pub gray: GrayImage,
    pub patches: Vec<Patch>,
}

impl Keyframe {
    pub fn frame_id(&self) -> usize {
        self.frame.frame_id
    }
}

/// Result of tracking one frame.
#[derive(Clone, Debug)]
pub struct TrackOutput {
    /// World-to-camera estimate at the time the frame was tracked.
    pub pose: Se3,
    pub is_keyframe: bool,
    pub tracking_lost: bool,
    /// Edges into this frame with nonzero weight.
    pub active_edges: usize,
    pub ba: BaReport,
}

/// Every tracked frame is stored relative to a keyframe, so later refinement
/// of that keyframe carries over.
#[derive(Clone, Debug)]
struct FrameRecord {
    timestamp: f64,
    reference: usize,
    relative: Se3,
}

/// Patch-graph visual odometry over a sliding window of keyframes.
///
/// Stored edges use frame ids for `host`/`target` and the patch's index within
/// its host keyframe for `patch`.
#[derive(Clone, Debug)]
pub struct TrackerState {
    cfg: TrackerConfig,
    keyframes: Vec<Keyframe>,
    edges: Vec<PatchGraphEdge>,
    retired: HashMap<usize, Se3>,
    records: Vec<FrameRecord>,
    last_pose: Option<Se3>,
    velocity: Se3,
    keyframe_count: usize,
    rng: ChaCha8Rng,
}

impl TrackerState {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            keyframes: Vec::new(),
            edges: Vec::new(),
            retired: HashMap::new(),
            records: Vec::new(),
            last_pose: None,
            velocity: Se3::identity(),
            keyframe_count: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn edges(&self) -> &[PatchGraphEdge] {
        &self.edges
    }

    /// Keyframes accepted since the start, including retired ones.
    pub fn keyframe_count(&self) -> usize {
        self.keyframe_count
    }

    pub fn is_initialized(&self) -> bool {
        self.keyframe_count >= self.cfg.init_keyframes
    }

    fn keyframe_pose(&self, id: usize) -> Option<Se3> {
        self.keyframes
            .iter()
            .find(|k| k.frame_id() == id)
            .map(|k| k.frame.pose.clone())
            .or_else(|| self.retired.get(&id).cloned())
    }

    /// World-to-camera poses of every tracked frame, using the latest keyframe
    /// estimates.
    pub fn trajectory(&self) -> Vec<(f64, Se3)> {
        self.records
            .iter()
            .map(|r| {
                let kf = self.keyframe_pose(r.reference).expect("reference keyframe is known");
                (r.timestamp, r.relative.compose(&kf))
            })
            .collect()
    }

    /// Applies a world rescaling about the first window keyframe to every
    /// stored quantity.
    fn rescale(&mut self, s: f64) {
        if s == 1.0 || self.keyframes.is_empty() {
            return;
        }
        let c = self.keyframes[0].frame.pose.center().coords;
        let map = |t: &mut Se3| t.translation = t.translation * s - (t.rotation * c) * (1.0 - s);
        for k in self.keyframes.iter_mut().skip(1) {
            map(&mut k.frame.pose);
        }
        for k in &mut self.keyframes {
            for p in &mut k.patches {
                p.inv_depth /= s;
            }
        }
        self.retired.values_mut().for_each(map);
        for r in &mut self.records {
            r.relative.translation *= s;
        }
        if let Some(p) = self.last_pose.as_mut() {
            map(p);
        }
        self.velocity.translation *= s;
    }

    fn correspondences(&self, gray: &GrayImage, pose: &Se3, target_id: usize, hosts: &[usize]) -> Vec<PatchGraphEdge> {
        let k = self.keyframes[0].frame.intrinsics;
        let margin = (self.cfg.patch_size / 2 + 1) as f64;
        let jobs: Vec<(usize, &Patch, Vector2<f64>)> = self
            .keyframes
            .iter()
            .filter(|kf| hosts.contains(&kf.frame_id()))
            .flat_map(|kf| {
                kf.patches.iter().filter_map(move |p| {
                    let pred = reproject_patch(p, &kf.frame.pose, pose, &k)?;
                    let ok = pred.x >= margin
                        && pred.y >= margin
                        && pred.x <= k.width as f64 - 1.0 - margin
                        && pred.y <= k.height as f64 - 1.0 - margin;
                    ok.then_some((kf.frame_id(), p, pred))
                })
            })
            .collect();
        jobs.par_iter()
            .map(|(host, p, pred)| {
                let (observation, weight) = compute_correspondence(p, gray, pred, &self.cfg.correspondence);
                PatchGraphEdge {
                    host: *host,
                    target: target_id,
                    patch: p.index,
                    observation,
                    weight,
                }
            })
            .collect()
    }

    /// Runs BA over the window plus an optional extra (non-keyframe) pose.
    fn optimize(&mut self, extra: Option<(usize, &mut Se3)>, extra_edges: &[PatchGraphEdge]) -> BaReport {
        let k = self.keyframes[0].frame.intrinsics;
        let mut slot: HashMap<usize, usize> = HashMap::new();
        let mut poses: Vec<Se3> = Vec::with_capacity(self.keyframes.len() + 1);
        let mut offsets: HashMap<usize, usize> = HashMap::new();
        let mut patches: Vec<Patch> = Vec::new();
        for kf in &self.keyframes {
            slot.insert(kf.frame_id(), poses.len());
            poses.push(kf.frame.pose.clone());
            offsets.insert(kf.frame_id(), patches.len());
            patches.extend(kf.patches.iter().cloned());
        }
        if let Some((id, pose)) = extra.as_ref() {
            slot.insert(*id, poses.len());
            poses.push((**pose).clone());
        }
        let edges: Vec<PatchGraphEdge> = self
            .edges
            .iter()
            .chain(extra_edges)
            .filter_map(|e| {
                Some(PatchGraphEdge {
                    host: *slot.get(&e.host)?,
                    target: *slot.get(&e.target)?,
                    patch: offsets.get(&e.host)? + e.patch,
                    observation: e.observation,
                    weight: e.weight,
                })
            })
            .collect();
        let gauge = if self.keyframes.len() >= 2 {
            ScaleGauge::RelativeTranslation(1)
        } else {
            ScaleGauge::MeanInverseDepth
        };
        let report = bundle_adjust(&k, &mut poses, &mut patches, &edges, gauge, &self.cfg.ba);
        let mut flat = patches.into_iter();
        for (kf, pose) in self.keyframes.iter_mut().zip(&poses) {
            kf.frame.pose = pose.clone();
            for p in kf.patches.iter_mut() {
                p.inv_depth = flat.next().expect("patch count unchanged").inv_depth;
            }
        }
        if let Some((_, out)) = extra {
            *out = poses.last().expect("extra pose present").clone();
        }
        report
    }

    fn median_inv_depth(kf: &Keyframe) -> f64 {
        let mut d: Vec<f64> = kf.patches.iter().map(|p| p.inv_depth).collect();
        if d.is_empty() {
            return DEFAULT_INV_DEPTH;
        }
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }

    fn add_keyframe(&mut self, frame: &CameraFrame, gray: GrayImage, inv_depth: f64) -> Result<()> {
        let patches = sample_patches(
            &gray,
            self.cfg.patches_per_keyframe,
            self.cfg.patch_size,
            frame.frame_id,
            inv_depth,
            &mut self.rng,
        )?;
        self.keyframes.push(Keyframe {
            frame: frame.clone(),
            gray,
            patches,
        });
        self.keyframe_count += 1;
        if self.keyframes.len() > self.cfg.window {
            let old = self.keyframes.remove(0);
            let id = old.frame_id();
            self.retired.insert(id, old.frame.pose);
            self.edges.retain(|e| e.host != id && e.target != id);
        }
        Ok(())
    }

    /// Tracks one frame: predicts its pose, matches window patches into it and
    /// runs bundle adjustment. The frame's own `pose` field is ignored.
    pub fn track_frame(&mut self, frame: &CameraFrame) -> Result<TrackOutput> {
        if let Some(r) = self.records.last() {
            if !(frame.timestamp > r.timestamp) {
                return Err(Error::Validation(format!(
                    "frame timestamps must increase ({} after {})",
                    frame.timestamp, r.timestamp
                )));
            }
        }
        let gray = frame.image.to_gray();
        if self.keyframes.is_empty() {
            let mut first = frame.clone();
            first.pose = Se3::identity();
            self.add_keyframe(&first, gray, DEFAULT_INV_DEPTH)?;
            self.records.push(FrameRecord {
                timestamp: frame.timestamp,
                reference: frame.frame_id,
                relative: Se3::identity(),
            });
            self.last_pose = Some(Se3::identity());
            return Ok(TrackOutput {
                pose: Se3::identity(),
                is_keyframe: true,
                tracking_lost: false,
                active_edges: 0,
                ba: BaReport::default(),
            });
        }

        let last = self.last_pose.clone().expect("set after the first frame");
        let predicted = self.velocity.compose(&last);
        let hosts: Vec<usize> = self.keyframes.iter().map(Keyframe::frame_id).collect();
        let new_edges = self.correspondences(&gray, &predicted, frame.frame_id, &hosts);
        let active = new_edges.iter().filter(|e| e.weight != Vector2::zeros()).count();
        if active < self.cfg.min_edges {
            let last_kf = self.keyframes.last().expect("window is non-empty");
            let record = FrameRecord {
                timestamp: frame.timestamp,
                reference: last_kf.frame_id(),
                relative: predicted.compose(&last_kf.frame.pose.inverse()),
            };
            self.records.push(record);
            self.last_pose = Some(predicted.clone());
            return Ok(TrackOutput {
                pose: predicted,
                is_keyframe: false,
                tracking_lost: true,
                active_edges: active,
                ba: BaReport::default(),
            });
        }

        let mut pose = predicted;
        let mut report = self.optimize(Some((frame.frame_id, &mut pose)), &new_edges);

        let k = frame.intrinsics;
        let last_kf = self.keyframes.last().expect("window is non-empty");
        let flows: Vec<f64> = last_kf
            .patches
            .iter()
            .filter_map(|p| reproject_patch(p, &last_kf.frame.pose, &pose, &k).map(|q| (q - p.center).norm()))
            .collect();
        let flow = if flows.is_empty() {
            0.0
        } else {
            flows.iter().sum::<f64>() / flows.len() as f64
        };
        let is_keyframe = flow > self.cfg.keyframe_flow;

        if is_keyframe {
            let inv_depth = Self::median_inv_depth(last_kf);
            let prev_id = last_kf.frame_id();
            let mut kf_frame = frame.clone();
            kf_frame.pose = pose.clone();
            self.edges.extend(new_edges);
            self.add_keyframe(&kf_frame, gray, inv_depth)?;
            if self.keyframe_count == 2 {
                // monocular scale convention: unit baseline to the second keyframe
                let n = pose.compose(&self.keyframes[0].frame.pose.inverse()).translation.norm();
                if n > 1e-9 {
                    self.rescale(1.0 / n);
                }
            }
            let new_kf = self.keyframes.last().expect("just pushed");
            let prev = self.keyframes.iter().find(|kf| kf.frame_id() == prev_id);
            if let Some(prev) = prev {
                let back = self.backward_edges(new_kf, prev);
                self.edges.extend(back);
            }
            report = self.optimize(None, &[]);
            pose = self.keyframes.last().expect("just pushed").frame.pose.clone();
            self.records.push(FrameRecord {
                timestamp: frame.timestamp,
                reference: frame.frame_id,
                relative: Se3::identity(),
            });
        } else {
            let kf = self.keyframes.last().expect("window is non-empty");
            self.records.push(FrameRecord {
                timestamp: frame.timestamp,
                reference: kf.frame_id(),
                relative: pose.compose(&kf.frame.pose.inverse()),
            });
        }

        self.velocity = pose.compose(&self.last_pose.clone().expect("set").inverse());
        self.last_pose = Some(pose.clone());
        Ok(TrackOutput {
            pose,
            is_keyframe,
            tracking_lost: false,
            active_edges: active,
            ba: report,
        })
    }

    /// Matches a new keyframe's patches into the previous keyframe.
    fn backward_edges(&self, new_kf: &Keyframe, prev: &Keyframe) -> Vec<PatchGraphEdge> {
        let k = new_kf.frame.intrinsics;
        let margin = (self.cfg.patch_size / 2 + 1) as f64;
        new_kf
            .patches
            .par_iter()
            .filter_map(|p| {
                let pred = reproject_patch(p, &new_kf.frame.pose, &prev.frame.pose, &k)?;
                if pred.x < margin
                    || pred.y < margin
                    || pred.x > k.width as f64 - 1.0 - margin
                    || pred.y > k.height as f64 - 1.0 - margin
                {
                    return None;
                }
                let (observation, weight) = compute_correspondence(p, &prev.gray, &pred, &self.cfg.correspondence);
                Some(PatchGraphEdge {
                    host: new_kf.frame_id(),
                    target: prev.frame_id(),
                    patch: p.index,
                    observation,
                    weight,
                })
            })
            .collect()
    }
}
