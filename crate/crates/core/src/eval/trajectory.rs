use nalgebra::Vector3;

use crate::scene::Se3;
use crate::{Error, Result};

/// Maximum timestamp gap for associating two trajectory samples, seconds.
pub const ASSOCIATION_WINDOW: f64 = 0.02;

/// Timestamped camera-to-world poses (TUM convention: the translation is the
/// camera position).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, Se3)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(f64, Se3)>) -> Result<Self> {
        let mut traj = Self::new();
        for (t, pose) in entries {
            traj.push(t, pose)?;
        }
        Ok(traj)
    }

    /// Builds a trajectory from world-to-camera poses.
    pub fn from_world_to_camera(entries: impl IntoIterator<Item = (f64, Se3)>) -> Result<Self> {
        Self::from_entries(entries.into_iter().map(|(t, p)| (t, p.inverse())).collect())
    }

    pub fn push(&mut self, timestamp: f64, camera_to_world: Se3) -> Result<()> {
        if let Some((last, _)) = self.entries.last() {
            if !(timestamp > *last) {
                return Err(Error::Validation(format!(
                    "trajectory timestamps must be strictly increasing ({timestamp} after {last})"
                )));
            }
        }
        self.entries.push((timestamp, camera_to_world));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, Se3)] {
        &self.entries
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(t, _)| *t)
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|(_, p)| p.translation).collect()
    }

    /// Sum of distances between consecutive positions.
    pub fn length(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[1].1.translation - w[0].1.translation).norm())
            .sum()
    }

    /// Index of the sample closest in time to `t`, if within `window`.
    pub fn nearest(&self, t: f64, window: f64) -> Option<usize> {
        if self.entries.is_empty() {
            return None;
        }
        let pos = self.entries.partition_point(|(ts, _)| *ts < t);
        let mut best: Option<(f64, usize)> = None;
        for i in [pos.wrapping_sub(1), pos] {
            if let Some((ts, _)) = self.entries.get(i) {
                let dt = (ts - t).abs();
                if dt <= window && best.is_none_or(|(b, _)| dt < b) {
                    best = Some((dt, i));
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Pairs `(est_index, gt_index)` whose timestamps differ by at most `window`.
pub fn associate(est: &Trajectory, gt: &Trajectory, window: f64) -> Vec<(usize, usize)> {
    est.timestamps()
        .enumerate()
        .filter_map(|(i, t)| gt.nearest(t, window).map(|j| (i, j)))
        .collect()
}
