//! Depth image and mask file formats: PFM (32-bit float), 16-bit PNG
//! (millimeters) and 8-bit PNG masks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use thiserror::Error;

use super::{DepthImage, SegmentationMask};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("PNG error: {0}")]
    Png(#[from] image::ImageError),
    #[error("bad PFM file: {0}")]
    BadPfm(String),
}

/// Writes a grayscale PFM (negative scale = little-endian, rows stored
/// bottom-to-top per the format convention).
pub fn save_pfm(depth: &DepthImage, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", depth.width, depth.height)?;
    let mut row = vec![0u8; depth.width * 4];
    for v in (0..depth.height).rev() {
        for u in 0..depth.width {
            LittleEndian::write_f32(&mut row[u * 4..u * 4 + 4], depth.get(u, v));
        }
        w.write_all(&row)?;
    }
    Ok(())
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<DepthImage, ImageIoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    for _ in 0..3 {
        let mut line = String::new();
        r.read_line(&mut line)?;
        header.push_str(&line);
    }
    let mut tokens = header.split_whitespace();
    let magic = tokens.next().unwrap_or("");
    if magic != "Pf" {
        return Err(ImageIoError::BadPfm(format!(
            "expected grayscale magic Pf, got {magic}"
        )));
    }
    let width: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ImageIoError::BadPfm("bad width".into()))?;
    let height: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ImageIoError::BadPfm("bad height".into()))?;
    let scale: f64 = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| ImageIoError::BadPfm("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(ImageIoError::BadPfm("big-endian PFM not supported".into()));
    }
    let mut buf = vec![0u8; width * height * 4];
    r.read_exact(&mut buf)?;
    let mut img = DepthImage::zeroed(width, height);
    for v in 0..height {
        let src_row = height - 1 - v;
        for u in 0..width {
            let off = (src_row * width + u) * 4;
            img.set(u, v, LittleEndian::read_f32(&buf[off..off + 4]));
        }
    }
    Ok(img)
}

/// 16-bit PNG with depth in integer millimeters (saturating at u16::MAX).
pub fn save_depth_png16(depth: &DepthImage, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        depth.width as u32,
        depth.height as u32,
    );
    for (u, v, px) in img.enumerate_pixels_mut() {
        let mm = (depth.get(u as usize, v as usize) as f64 * 1000.0).round();
        *px = image::Luma([mm.clamp(0.0, u16::MAX as f64) as u16]);
    }
    img.save(path)?;
    Ok(())
}

/// 8-bit PNG mask: object = 255, background = 0.
pub fn save_mask_png8(mask: &SegmentationMask, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let mut img =
        image::ImageBuffer::<image::Luma<u8>, Vec<u8>>::new(mask.width as u32, mask.height as u32);
    for (u, v, px) in img.enumerate_pixels_mut() {
        *px = image::Luma([if mask.is_object(u as usize, v as usize) {
            255
        } else {
            0
        }]);
    }
    img.save(path)?;
    Ok(())
}
