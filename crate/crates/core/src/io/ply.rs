//! Binary little-endian PLY for Gaussian maps.
//!
//! Per vertex, as `float`: `x y z`, `rot_0..3` (w, x, y, z), `scale_0..2`
//! (log), `opacity` (logit), `red green blue` (linear, `[0, 1]`).

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::scene::{Gaussian3D, GaussianMap};
use crate::{Error, Result};

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity", "red", "green",
    "blue",
];

pub fn encode_ply(map: &GaussianMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 + map.len() * PROPERTIES.len() * 4);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", map.len()).as_bytes());
    for p in PROPERTIES {
        out.extend_from_slice(format!("property float {p}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for g in map.iter() {
        let values = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.opacity_logit,
            g.color.x,
            g.color.y,
            g.color.z,
        ];
        for v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_map_ply(map: &GaussianMap, path: &Path) -> Result<()> {
    fs::write(path, encode_ply(map)).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a map written by [`write_map_ply`]. Property order may differ; all
/// fourteen properties must be present as `float`.
pub fn read_map_ply(path: &Path, cell_size: f64) -> Result<GaussianMap> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut line_no = 0;
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    loop {
        line.clear();
        line_no += 1;
        if reader.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(parse_err(path, line_no, "missing end_header"));
        }
        let l = line.trim();
        let words: Vec<&str> = l.split_whitespace().collect();
        match words.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(parse_err(path, 1, "not a PLY file")),
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", ..] => return Err(parse_err(path, line_no, "only binary_little_endian 1.0 is supported")),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| parse_err(path, line_no, "bad vertex count"))?);
            }
            ["element", ..] => return Err(parse_err(path, line_no, "unexpected element")),
            ["property", "float", name] => props.push((*name).to_string()),
            ["property", ..] => return Err(parse_err(path, line_no, "only float properties are supported")),
            ["end_header"] => break,
            _ => return Err(parse_err(path, line_no, format!("unexpected header line {l:?}"))),
        }
    }
    let count = count.ok_or_else(|| parse_err(path, line_no, "no vertex element"))?;
    let slot: Vec<usize> = PROPERTIES
        .iter()
        .map(|want| {
            props
                .iter()
                .position(|p| p == want)
                .ok_or_else(|| parse_err(path, line_no, format!("missing property {want}")))
        })
        .collect::<Result<_>>()?;

    let stride = props.len() * 4;
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() < stride * count {
        return Err(parse_err(path, line_no, format!("truncated body: {count} vertices expected")));
    }
    let mut map = GaussianMap::new(cell_size);
    for v in 0..count {
        let rec = &body[v * stride..(v + 1) * stride];
        let f = |k: usize| {
            let o = slot[k] * 4;
            f64::from(f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]))
        };
        map.push(Gaussian3D {
            mean: Vector3::new(f(0), f(1), f(2)),
            rotation: Vector4::new(f(3), f(4), f(5), f(6)),
            log_scale: Vector3::new(f(7), f(8), f(9)),
            opacity_logit: f(10),
            color: Vector3::new(f(11), f(12), f(13)),
        });
    }
    Ok(map)
}
