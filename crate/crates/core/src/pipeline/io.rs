use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Extensions considered image files when scanning directories.
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "bmp", "tif", "tiff", "pgm", "ppm", "pnm"];

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn luma(rgb: [f64; 3]) -> f64 {
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}

/// Reads a grayscale or RGB raster as luminance in [0, 1].
pub fn load_gray(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb16(b) => b
            .pixels()
            .map(|p| luma([p[0] as f64, p[1] as f64, p[2] as f64]) / 65535.0)
            .collect(),
        DynamicImage::ImageRgba16(b) => b
            .pixels()
            .map(|p| luma([p[0] as f64, p[1] as f64, p[2] as f64]) / 65535.0)
            .collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma([p[0] as f64, p[1] as f64, p[2] as f64]) / 255.0)
            .collect(),
    };
    Image::new(h, w, data)
}

/// Round-half-up 8-bit quantization of a value clamped to [0, 1]; NaN maps to 0.
pub fn quantize(v: f64) -> u8 {
    let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (c * 255.0 + 0.5).floor() as u8
}

fn out_of_range(v: f64) -> bool {
    !(0.0..=1.0).contains(&v)
}

/// Writes an 8-bit grayscale file (format from the extension). Returns how many
/// pixels had to be clamped.
pub fn save_gray(img: &Image, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let clamped = img.data().iter().filter(|&&v| out_of_range(v)).count();
    let buf: GrayImage = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Luma([quantize(img.get(y as usize, x as usize))])
    });
    buf.save(path).map_err(|e| image_err(path, e))?;
    Ok(clamped)
}

/// 16-bit variant of [`save_gray`], used for lossless diagnostic dumps.
pub fn save_gray16(img: &Image, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let clamped = img.data().iter().filter(|&&v| out_of_range(v)).count();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
            let v = img.get(y as usize, x as usize);
            let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            Luma([(c * 65535.0 + 0.5).floor() as u16])
        });
    buf.save(path).map_err(|e| image_err(path, e))?;
    Ok(clamped)
}
