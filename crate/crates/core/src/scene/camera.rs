use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::se3::Se3;
use crate::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::Validation(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point. Caller guarantees `p.z > 0`.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// `K⁻¹·[u, v, 1]ᵀ`: the normalized viewing ray with unit z.
    pub fn unproject(&self, uv: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy, 1.0)
    }

    /// Same camera at a different resolution.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: (self.width as f64 * factor).round() as usize,
            height: (self.height as f64 * factor).round() as usize,
        }
    }
}

/// Row-major RGB image with channel values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, color: Vector3<f64>) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(color.as_slice());
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Validation(format!(
                "buffer of {} values does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vector3<f64> {
        let i = (y * self.width + x) * 3;
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: &Vector3<f64>) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(c.as_slice());
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample with edge clamping; pixel centers at integer coordinates.
    pub fn sample(&self, x: f64, y: f64) -> Vector3<f64> {
        let (x0, y0, fx, fy) = bilinear_setup(x, y, self.width, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        self.pixel(x0, y0) * ((1.0 - fx) * (1.0 - fy))
            + self.pixel(x1, y0) * (fx * (1.0 - fy))
            + self.pixel(x0, y1) * ((1.0 - fx) * fy)
            + self.pixel(x1, y1) * (fx * fy)
    }

    /// Rec. 601 luma.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

fn bilinear_setup(x: f64, y: f64, w: usize, h: usize) -> (usize, usize, f64, f64) {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    (x0, y0, xc - x0 as f64, yc - y0 as f64)
}

/// Single-channel image used by the tracker.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0, fx, fy) = bilinear_setup(x, y, self.width, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        self.get(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + self.get(x1, y0) * fx * (1.0 - fy)
            + self.get(x0, y1) * (1.0 - fx) * fy
            + self.get(x1, y1) * fx * fy
    }

    /// Central-difference gradient, zero on the one-pixel border.
    pub fn gradient(&self) -> (GrayImage, GrayImage) {
        let (w, h) = (self.width, self.height);
        let gx = GrayImage::from_fn(w, h, |x, y| {
            if x == 0 || x + 1 >= w || y == 0 || y + 1 >= h {
                0.0
            } else {
                0.5 * (self.get(x + 1, y) - self.get(x - 1, y))
            }
        });
        let gy = GrayImage::from_fn(w, h, |x, y| {
            if x == 0 || x + 1 >= w || y == 0 || y + 1 >= h {
                0.0
            } else {
                0.5 * (self.get(x, y + 1) - self.get(x, y - 1))
            }
        });
        (gx, gy)
    }
}

/// A posed image. `pose` maps world points into the camera frame.
#[derive(Clone, Debug)]
pub struct CameraFrame {
    pub intrinsics: Intrinsics,
    pub pose: Se3,
    pub image: Image,
    pub timestamp: f64,
    pub frame_id: usize,
}

impl CameraFrame {
    pub fn new(intrinsics: Intrinsics, pose: Se3, image: Image, timestamp: f64, frame_id: usize) -> Result<Self> {
        intrinsics.validate()?;
        if image.width() != intrinsics.width || image.height() != intrinsics.height {
            return Err(Error::Validation(format!(
                "image {}x{} does not match intrinsics {}x{}",
                image.width(),
                image.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        Ok(Self {
            intrinsics,
            pose,
            image,
            timestamp,
            frame_id,
        })
    }

    /// A frame with a blank image, for rendering targets.
    pub fn blank(intrinsics: Intrinsics, pose: Se3) -> Self {
        Self {
            intrinsics,
            pose,
            image: Image::new(intrinsics.width, intrinsics.height),
            timestamp: 0.0,
            frame_id: 0,
        }
    }
}
