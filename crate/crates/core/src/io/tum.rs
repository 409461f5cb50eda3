//! TUM RGB-D layout: `rgb.txt` ("timestamp filename") and `groundtruth.txt`
//! ("timestamp tx ty tz qx qy qz qw", camera-to-world).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{DatasetFormat, FrameEntry, FrameSource, SequenceSpec};
use crate::eval::{Trajectory, ASSOCIATION_WINDOW};
use crate::scene::{Intrinsics, Se3};
use crate::{Error, Result};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("not a number: {field:?}"),
    })
}

/// Parses an `rgb.txt`-style list into `(timestamp, relative path)` pairs.
pub fn parse_image_list(path: &Path, text: &str) -> Result<Vec<(f64, PathBuf)>> {
    data_lines(text)
        .map(|(line, l)| {
            let mut it = l.split_whitespace();
            let (Some(t), Some(file)) = (it.next(), it.next()) else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: "expected \"timestamp filename\"".into(),
                });
            };
            Ok((parse_f64(path, line, t)?, PathBuf::from(file)))
        })
        .collect()
}

/// Parses TUM trajectory text.
pub fn parse_trajectory(path: &Path, text: &str) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    for (line, l) in data_lines(text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let v = fields
            .iter()
            .map(|f| parse_f64(path, line, f))
            .collect::<Result<Vec<f64>>>()?;
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if !(q.norm() > 1e-9) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "zero quaternion".into(),
            });
        }
        let pose = Se3::new(UnitQuaternion::from_quaternion(q), Vector3::new(v[1], v[2], v[3]));
        traj.push(v[0], pose).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
    }
    Ok(traj)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory(path, &read_text(path)?)
}

/// TUM text for a trajectory; empty trajectories give an empty string.
pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (t, p) in traj.entries() {
        let q = p.rotation.quaternion();
        let c = &p.translation;
        writeln!(
            out,
            "{t:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            c.x, c.y, c.z, q.i, q.j, q.k, q.w
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, format_trajectory(traj)).map_err(|e| Error::io(path, e))
}

/// Default intrinsics for a TUM sequence, chosen by the Freiburg camera named
/// in the directory (640×480).
pub fn tum_intrinsics(root: &Path) -> Intrinsics {
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    let (fx, fy, cx, cy) = if name.contains("freiburg1") || name.contains("fr1") {
        (517.3, 516.5, 318.6, 255.3)
    } else if name.contains("freiburg2") || name.contains("fr2") {
        (520.9, 521.0, 325.1, 249.7)
    } else if name.contains("freiburg3") || name.contains("fr3") {
        (535.4, 539.2, 320.1, 247.6)
    } else {
        (525.0, 525.0, 319.5, 239.5)
    };
    Intrinsics {
        fx,
        fy,
        cx,
        cy,
        width: 640,
        height: 480,
    }
}

/// Loads a TUM-layout sequence. Ground truth, when present, is associated to
/// each frame by nearest timestamp within the association window.
pub(crate) fn load_tum_layout(root: &Path, intrinsics: Intrinsics, format: DatasetFormat) -> Result<SequenceSpec> {
    let list_path = root.join("rgb.txt");
    if !list_path.is_file() {
        return Err(Error::Dataset(format!("{} not found", list_path.display())));
    }
    let list = parse_image_list(&list_path, &read_text(&list_path)?)?;
    let gt_path = root.join("groundtruth.txt");
    let ground_truth = if gt_path.is_file() {
        Some(read_trajectory(&gt_path)?)
    } else {
        None
    };
    let mut frames: Vec<FrameEntry> = Vec::with_capacity(list.len());
    for (t, rel) in list {
        if let Some(last) = frames.last() {
            if !(t > last.timestamp) {
                return Err(Error::Dataset(format!(
                    "{}: timestamps must increase ({t} after {})",
                    list_path.display(),
                    last.timestamp
                )));
            }
        }
        let gt = ground_truth
            .as_ref()
            .and_then(|g| g.nearest(t, ASSOCIATION_WINDOW).map(|i| g.entries()[i].1.clone()));
        frames.push(FrameEntry {
            timestamp: t,
            source: FrameSource::File(root.join(rel)),
            ground_truth: gt,
        });
    }
    intrinsics.validate()?;
    Ok(SequenceSpec {
        format,
        root: root.to_path_buf(),
        intrinsics,
        frames,
        ground_truth,
    })
}

/// Loads a TUM RGB-D sequence; `intrinsics` overrides the per-family default.
pub fn load_tum(root: &Path, intrinsics: Option<Intrinsics>) -> Result<SequenceSpec> {
    load_tum_layout(root, intrinsics.unwrap_or_else(|| tum_intrinsics(root)), DatasetFormat::Tum)
}
