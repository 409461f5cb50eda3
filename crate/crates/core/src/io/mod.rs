//! Dataset ingestion and artifact output.

mod image_io;
mod ply;
mod replica;
mod synthetic;
mod tum;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

pub use image_io::{read_image, to_rgb8, write_png};
pub use ply::{encode_ply, read_map_ply, write_map_ply};
pub use replica::{load_replica, parse_matrix_trajectory};
pub use synthetic::{
    generate_synthetic, load_synthetic, look_at, write_synthetic, SyntheticMetadata, SyntheticScene,
    SyntheticTrajectory, SYNTHETIC_METADATA,
};
pub use tum::{
    format_trajectory, load_tum, parse_image_list, parse_trajectory, read_trajectory, tum_intrinsics,
    write_trajectory,
};

use crate::eval::Trajectory;
use crate::scene::{CameraFrame, Image, Intrinsics, Se3};
use crate::{Error, Result};

/// Frames decoded ahead of the consumer.
pub const PREFETCH_DEPTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Tum,
    Replica,
    Synthetic,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tum" => Ok(Self::Tum),
            "replica" => Ok(Self::Replica),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tum => "tum",
            Self::Replica => "replica",
            Self::Synthetic => "synthetic",
        })
    }
}

#[derive(Clone, Debug)]
pub enum FrameSource {
    File(PathBuf),
    Memory(Arc<Image>),
}

#[derive(Clone, Debug)]
pub struct FrameEntry {
    pub timestamp: f64,
    pub source: FrameSource,
    /// Associated camera-to-world ground truth, if any.
    pub ground_truth: Option<Se3>,
}

/// A loaded sequence: frame list (timestamps strictly increasing), camera and
/// optional ground truth.
#[derive(Clone, Debug)]
pub struct SequenceSpec {
    pub format: DatasetFormat,
    pub root: PathBuf,
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameEntry>,
    /// The raw ground-truth trajectory (camera-to-world).
    pub ground_truth: Option<Trajectory>,
}

impl SequenceSpec {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Decodes frame `i`. The pose is left at identity; `frame_id = i`.
    pub fn load_frame(&self, i: usize) -> Result<CameraFrame> {
        let entry = &self.frames[i];
        let image = match &entry.source {
            FrameSource::File(p) => read_image(p)?,
            FrameSource::Memory(img) => (**img).clone(),
        };
        CameraFrame::new(self.intrinsics, Se3::identity(), image, entry.timestamp, i)
    }

    /// Ground truth at the frames that have an association.
    pub fn frame_ground_truth(&self) -> Trajectory {
        let mut t = Trajectory::new();
        for f in &self.frames {
            if let Some(g) = &f.ground_truth {
                t.push(f.timestamp, g.clone()).expect("frame timestamps increase");
            }
        }
        t
    }

    /// Decodes frames on a background thread, at most [`PREFETCH_DEPTH`]
    /// ahead. Frames that fail to decode are skipped with a warning.
    pub fn stream(&self) -> impl Iterator<Item = CameraFrame> {
        let (tx, rx) = sync_channel(PREFETCH_DEPTH);
        let seq = self.clone();
        thread::spawn(move || {
            for i in 0..seq.len() {
                match seq.load_frame(i) {
                    Ok(f) => {
                        if tx.send(f).is_err() {
                            return;
                        }
                    }
                    Err(e) => log::warn!("skipping frame {i}: {e}"),
                }
            }
        });
        rx.into_iter()
    }
}

/// Loads a dataset by format. `intrinsics` is required for Replica and
/// optional elsewhere.
pub fn load_dataset(format: DatasetFormat, root: &Path, intrinsics: Option<Intrinsics>) -> Result<SequenceSpec> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut seq = match format {
        DatasetFormat::Tum => load_tum(root, intrinsics)?,
        DatasetFormat::Replica => load_replica(
            root,
            intrinsics.ok_or_else(|| Error::Config("replica datasets need intrinsics in the config".into()))?,
        )?,
        DatasetFormat::Synthetic => load_synthetic(root)?,
    };
    if let (Some(k), DatasetFormat::Synthetic) = (intrinsics, format) {
        k.validate()?;
        seq.intrinsics = k;
    }
    Ok(seq)
}
