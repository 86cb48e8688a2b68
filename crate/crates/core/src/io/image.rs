//! PNG and PFM image reading and writing.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// A decoded image with row-major pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<T>,
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::file(path, e.to_string()))
}

fn save<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::file(path, e.to_string()))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads an 8- or 16-bit image as RGB in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Image<[f64; 3]>> {
    let img = open(path)?.into_rgb16();
    let (w, h) = img.dimensions();
    let pixels = img
        .pixels()
        .map(|p| p.0.map(|v| f64::from(v) / 65535.0))
        .collect();
    Ok(Image {
        width: w as usize,
        height: h as usize,
        pixels,
    })
}

/// Writes RGB values in `[0, 1]` as an 8-bit PNG (values are clamped and
/// rounded, with no transfer curve applied).
pub fn write_rgb(path: &Path, width: usize, height: usize, pixels: &[[f64; 3]]) -> Result<()> {
    let img = RgbImage::from_fn(width as u32, height as u32, |x, y| {
        Rgb(pixels[y as usize * width + x as usize].map(to_u8))
    });
    save(&img, path)
}

/// Writes a camera-frame normal map with `n -> 0.5 n + 0.5`.
pub fn write_normals(path: &Path, width: usize, height: usize, normals: &[[f64; 3]]) -> Result<()> {
    let mapped: Vec<[f64; 3]> = normals.iter().map(|n| n.map(|v| 0.5 * v + 0.5)).collect();
    write_rgb(path, width, height, &mapped)
}

/// Writes a single-channel image in `[0, 1]` as an 8-bit PNG.
pub fn write_gray(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([to_u8(values[y as usize * width + x as usize])])
    });
    save(&img, path)
}

/// Reads a 16-bit PNG depth map in millimeters and returns meters.
pub fn read_depth_png(path: &Path) -> Result<Image<f64>> {
    let img = open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    Ok(Image {
        width: w as usize,
        height: h as usize,
        pixels: img.pixels().map(|p| f64::from(p.0[0]) / 1000.0).collect(),
    })
}

/// Writes depth in meters as a 16-bit PNG in millimeters.
pub fn write_depth_png(path: &Path, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let v = depth[y as usize * width + x as usize] * 1000.0;
        Luma([v.round().clamp(0.0, 65535.0) as u16])
    });
    save(&img, path)
}

/// Reads a nonzero-is-true mask.
pub fn read_mask(path: &Path) -> Result<Image<bool>> {
    let img = open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(Image {
        width: w as usize,
        height: h as usize,
        pixels: img.pixels().map(|p| p.0[0] != 0).collect(),
    })
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([if mask[y as usize * width + x as usize] { 255 } else { 0 }])
    });
    save(&img, path)
}

/// Writes a single-channel little-endian PFM (rows stored bottom to top).
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for x in 0..width {
            out.extend_from_slice(&(values[y * width + x] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e.to_string()))
}

/// Reads a single-channel PFM.
pub fn read_pfm(path: &Path) -> Result<Image<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    let bad = |msg: &str| Error::file(path, format!("malformed PFM: {msg}"));
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(bad("short header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..at]).into_owned());
    }
    at += 1;
    if fields[0] != "Pf" {
        return Err(bad("only single-channel Pf files are supported"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("scale"))?;
    let data = bytes.get(at..).ok_or_else(|| bad("missing data"))?;
    if data.len() < width * height * 4 {
        return Err(bad("truncated data"));
    }
    let mut pixels = vec![0.0; width * height];
    for (k, chunk) in data.chunks_exact(4).take(width * height).enumerate() {
        let raw: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if scale < 0.0 {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, x) = (k / width, k % width);
        pixels[(height - 1 - row) * width + x] = f64::from(v);
    }
    Ok(Image {
        width,
        height,
        pixels,
    })
}
