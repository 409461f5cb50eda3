//! Procedural Gaussian scenes rendered along a parametric camera path.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_io::write_png;
use super::ply::write_map_ply;
use super::tum::{load_tum_layout, write_trajectory};
use super::{DatasetFormat, FrameEntry, FrameSource, SequenceSpec};
use crate::eval::Trajectory;
use crate::scene::{Gaussian3D, GaussianMap, Intrinsics, Se3};
use crate::splat::render;
use crate::{Error, Result};

/// Camera path. Cameras always look at `target` (orbit: the origin) with the
/// world −y axis as "up".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SyntheticTrajectory {
    /// Arc of a horizontal circle around the origin. With `passes > 1` the arc
    /// is traversed back and forth.
    Orbit {
        radius: f64,
        height: f64,
        arc_deg: f64,
        passes: usize,
    },
    Line {
        start: [f64; 3],
        end: [f64; 3],
        target: [f64; 3],
    },
}

/// A cube of flat, randomly colored Gaussians on its faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticScene {
    pub seed: u64,
    pub n_gaussians: usize,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
    /// Half the cube's side length.
    pub half_size: f64,
    pub trajectory: SyntheticTrajectory,
    pub background: [f64; 3],
    pub frame_rate: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            seed: 0,
            n_gaussians: 3000,
            n_frames: 30,
            width: 160,
            height: 120,
            fov_deg: 60.0,
            half_size: 1.0,
            trajectory: SyntheticTrajectory::Orbit {
                radius: 3.5,
                height: 1.2,
                arc_deg: 30.0,
                passes: 1,
            },
            background: [0.0; 3],
            frame_rate: 30.0,
        }
    }
}

/// World-to-camera pose of a camera at `center` looking at `target`.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Se3 {
    let z = (target - center).normalize();
    let down = Vector3::new(0.0, 1.0, 0.0);
    let mut x = down.cross(&z);
    if x.norm() < 1e-9 {
        x = Vector3::x();
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r_wc = Matrix3::from_columns(&[x, y, z]).transpose();
    Se3::from_parts(r_wc, -(r_wc * center))
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Validation("synthetic images must be at least 16x16".into()));
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 170.0) {
            return Err(Error::Validation(format!("fov_deg out of range: {}", self.fov_deg)));
        }
        if !(self.half_size > 0.0 && self.frame_rate > 0.0) {
            return Err(Error::Validation("half_size and frame_rate must be positive".into()));
        }
        if let SyntheticTrajectory::Orbit { radius, passes, .. } = self.trajectory {
            if !(radius > self.half_size * 3f64.sqrt()) || passes == 0 {
                return Err(Error::Validation("orbit must stay outside the cube with passes >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let f = 0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        i as f64 / self.frame_rate
    }

    /// World-to-camera pose of frame `i` along the path.
    pub fn pose(&self, i: usize) -> Se3 {
        let span = self.n_frames.saturating_sub(1).max(1) as f64;
        match &self.trajectory {
            SyntheticTrajectory::Orbit {
                radius,
                height,
                arc_deg,
                passes,
            } => {
                let s = i as f64 / span * *passes as f64;
                let lap = s.floor();
                let frac = s - lap;
                // triangle wave: forward on even laps, back on odd ones
                let u = if (lap as usize) % 2 == 0 { frac } else { 1.0 - frac };
                let theta = arc_deg.to_radians() * (u - 0.5);
                let c = Vector3::new(radius * theta.sin(), -height, -radius * theta.cos());
                look_at(&c, &Vector3::zeros())
            }
            SyntheticTrajectory::Line { start, end, target } => {
                let u = i as f64 / span;
                let (a, b) = (Vector3::from(*start), Vector3::from(*end));
                look_at(&(a + (b - a) * u), &Vector3::from(*target))
            }
        }
    }

    pub fn poses(&self) -> Vec<Se3> {
        (0..self.n_frames).map(|i| self.pose(i)).collect()
    }

    /// The ground-truth Gaussians; identical for identical seeds.
    pub fn gaussians(&self) -> Vec<Gaussian3D> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let h = self.half_size;
        let spacing = (24.0 * h * h / self.n_gaussians.max(1) as f64).sqrt();
        (0..self.n_gaussians)
            .map(|_| {
                let face = rng.random_range(0..6usize);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut mean = Vector3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h));
                mean[axis] = sign * h;
                let mut normal = Vector3::zeros();
                normal[axis] = 1.0;
                let mut scale = Vector3::from_fn(|_, _| rng.random_range(0.5..1.2) * spacing);
                scale[axis] = 0.05 * spacing;
                let spin = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(normal), rng.random_range(0.0..std::f64::consts::PI));
                let q = spin.quaternion();
                let color = Vector3::from_fn(|_, _| rng.random_range(0.05..0.95));
                Gaussian3D::new(
                    mean,
                    nalgebra::Vector4::new(q.w, q.i, q.j, q.k),
                    scale,
                    rng.random_range(0.6..0.95),
                    color,
                )
            })
            .collect()
    }

    pub fn ground_truth_map(&self) -> GaussianMap {
        let spacing = (24.0 * self.half_size * self.half_size / self.n_gaussians.max(1) as f64).sqrt();
        GaussianMap::from_gaussians(spacing, self.gaussians())
    }

    pub fn background(&self) -> Vector3<f64> {
        Vector3::from(self.background)
    }
}

/// Renders every pose of `scene` against its ground-truth Gaussians.
pub fn generate_synthetic(scene: &SyntheticScene) -> Result<SequenceSpec> {
    scene.validate()?;
    let k = scene.intrinsics();
    let map = scene.ground_truth_map();
    let bg = scene.background();
    let mut frames = Vec::with_capacity(scene.n_frames);
    let mut gt = Trajectory::new();
    for i in 0..scene.n_frames {
        let pose = scene.pose(i);
        let cam = crate::scene::CameraFrame::blank(k, pose.clone());
        let img = render(&map, &cam, &bg).color;
        let c2w = pose.inverse();
        gt.push(scene.timestamp(i), c2w.clone())?;
        frames.push(FrameEntry {
            timestamp: scene.timestamp(i),
            source: FrameSource::Memory(Arc::new(img)),
            ground_truth: Some(c2w),
        });
    }
    Ok(SequenceSpec {
        format: DatasetFormat::Synthetic,
        root: Default::default(),
        intrinsics: k,
        frames,
        ground_truth: Some(gt),
    })
}

/// Metadata stored next to a materialized synthetic sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticMetadata {
    pub scene: SyntheticScene,
    pub intrinsics: Intrinsics,
}

pub const SYNTHETIC_METADATA: &str = "synthetic.json";

/// Writes a TUM-style directory: `rgb/NNNNNN.png`, `rgb.txt`,
/// `groundtruth.txt`, `gt_map.ply` and the generator metadata.
pub fn write_synthetic(scene: &SyntheticScene, out: &Path) -> Result<()> {
    let seq = generate_synthetic(scene)?;
    let rgb_dir = out.join("rgb");
    fs::create_dir_all(&rgb_dir).map_err(|e| Error::io(&rgb_dir, e))?;
    let mut list = String::from("# timestamp filename\n");
    for (i, f) in seq.frames.iter().enumerate() {
        let FrameSource::Memory(img) = &f.source else {
            unreachable!("generated frames live in memory")
        };
        let name = format!("rgb/{i:06}.png");
        write_png(img, &out.join(&name))?;
        list.push_str(&format!("{:.6} {name}\n", f.timestamp));
    }
    let list_path = out.join("rgb.txt");
    fs::write(&list_path, list).map_err(|e| Error::io(&list_path, e))?;
    write_trajectory(seq.ground_truth.as_ref().expect("synthetic has ground truth"), &out.join("groundtruth.txt"))?;
    write_map_ply(&scene.ground_truth_map(), &out.join("gt_map.ply"))?;
    let meta = SyntheticMetadata {
        scene: scene.clone(),
        intrinsics: seq.intrinsics,
    };
    let meta_path = out.join(SYNTHETIC_METADATA);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("serializable"))
        .map_err(|e| Error::io(&meta_path, e))
}

/// Loads a directory written by [`write_synthetic`].
pub fn load_synthetic(root: &Path) -> Result<SequenceSpec> {
    let meta_path = root.join(SYNTHETIC_METADATA);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SyntheticMetadata =
        serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", meta_path.display())))?;
    load_tum_layout(root, meta.intrinsics, DatasetFormat::Synthetic)
}
