use std::path::Path;

use crate::scene::Image;
use crate::{Error, Result};

/// Reads an 8- or 16-bit image as linear `[0, 1]` RGB.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(f64::from).collect();
    Image::from_raw(w as usize, h as usize, data)
}

/// Quantizes to 8 bits: clamp to `[0, 1]`, scale by 255, round; no gamma.
pub fn to_rgb8(img: &Image) -> Vec<u8> {
    img.data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, to_rgb8(img))
        .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
