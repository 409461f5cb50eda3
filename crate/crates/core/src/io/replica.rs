//! Replica-style layout: a flat image directory (`results/` if present, the
//! root otherwise) plus `traj.txt` holding one row-major 4×4 camera-to-world
//! matrix per line, in frame order. Frame `i` gets timestamp `i` seconds.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};

use super::{DatasetFormat, FrameEntry, FrameSource, SequenceSpec};
use crate::eval::Trajectory;
use crate::scene::{Intrinsics, Se3};
use crate::{Error, Result};

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut all: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    let stem_starts = |p: &PathBuf, s: &str| p.file_stem().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(s));
    // depth maps share the directory in the common distribution
    if all.iter().any(|p| stem_starts(p, "frame")) {
        all.retain(|p| stem_starts(p, "frame"));
    }
    all.sort();
    Ok(all)
}

pub fn parse_matrix_trajectory(path: &Path, text: &str) -> Result<Vec<Se3>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if v.len() != 16 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected 16 values, found {}", v.len()),
                });
            }
            let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
            Ok(Se3::from_parts(r, Vector3::new(v[3], v[7], v[11])))
        })
        .collect()
}

pub fn load_replica(root: &Path, intrinsics: Intrinsics) -> Result<SequenceSpec> {
    let results = root.join("results");
    let image_dir = if results.is_dir() { results } else { root.to_path_buf() };
    let images = list_images(&image_dir)?;
    let traj_path = root.join("traj.txt");
    let poses = if traj_path.is_file() {
        let text = fs::read_to_string(&traj_path).map_err(|e| Error::io(&traj_path, e))?;
        Some(parse_matrix_trajectory(&traj_path, &text)?)
    } else {
        None
    };
    if let Some(p) = &poses {
        if p.len() < images.len() {
            return Err(Error::Dataset(format!(
                "{} has {} poses for {} images",
                traj_path.display(),
                p.len(),
                images.len()
            )));
        }
    }
    let frames: Vec<FrameEntry> = images
        .into_iter()
        .enumerate()
        .map(|(i, path)| FrameEntry {
            timestamp: i as f64,
            source: FrameSource::File(path),
            ground_truth: poses.as_ref().map(|p| p[i].clone()),
        })
        .collect();
    let ground_truth = poses
        .map(|p| Trajectory::from_entries(p.into_iter().enumerate().map(|(i, t)| (i as f64, t)).collect()))
        .transpose()?;
    intrinsics.validate()?;
    Ok(SequenceSpec {
        format: DatasetFormat::Replica,
        root: root.to_path_buf(),
        intrinsics,
        frames,
        ground_truth,
    })
}
