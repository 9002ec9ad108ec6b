//! PNG reading and writing for rasters, masks, and label maps.

use crate::error::{Error, Result};
use crate::raster::{Domain, Raster, RawTile};
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array3};
use std::path::Path;

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Load any supported image as 8-bit RGB.
pub fn load_rgb8(path: &Path) -> Result<Raster> {
    let img = image::open(path)
        .map_err(|e| Error::DataError(format!("cannot open image {}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut pixels = Array3::<f64>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            pixels[(y as usize, x as usize, ch)] = p.0[ch] as f64;
        }
    }
    Raster::new(pixels, Domain::Uint8, "rgb")
}

/// Load a binary mask stored as an 8-bit grayscale PNG with values in
/// `{0, 255}`. Any other value is a data error, not a threshold decision.
pub fn load_mask(path: &Path) -> Result<Raster> {
    let img = image::open(path)
        .map_err(|e| Error::DataError(format!("cannot open mask {}: {e}", path.display())))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let mut plane = Array2::<f64>::zeros((h as usize, w as usize));
    for (x, y, p) in gray.enumerate_pixels() {
        let v = p.0[0];
        if v != 0 && v != 255 {
            return Err(Error::DataError(format!(
                "mask {} contains value {v}; masks must be 0/255",
                path.display()
            )));
        }
        plane[(y as usize, x as usize)] = (v / 255) as f64;
    }
    Raster::from_plane(plane, Domain::Binary, "mask")
}

/// Load raw integer bands (8- or 16-bit, gray or RGB) without rescaling.
pub fn load_raw(path: &Path) -> Result<RawTile> {
    let img = image::open(path)
        .map_err(|e| Error::DataError(format!("cannot open raw image {}: {e}", path.display())))?;
    let geo_id = stem(path);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            let mut a = Array3::<u32>::zeros((h as usize, w as usize, 1));
            for (x, y, p) in buf.enumerate_pixels() {
                a[(y as usize, x as usize, 0)] = p.0[0] as u32;
            }
            a
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let mut a = Array3::<u32>::zeros((h as usize, w as usize, 1));
            for (x, y, p) in buf.enumerate_pixels() {
                a[(y as usize, x as usize, 0)] = p.0[0] as u32;
            }
            a
        }
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            let mut a = Array3::<u32>::zeros((h as usize, w as usize, 3));
            for (x, y, p) in buf.enumerate_pixels() {
                for ch in 0..3 {
                    a[(y as usize, x as usize, ch)] = p.0[ch] as u32;
                }
            }
            a
        }
        DynamicImage::ImageRgb16(buf) => {
            let (w, h) = buf.dimensions();
            let mut a = Array3::<u32>::zeros((h as usize, w as usize, 3));
            for (x, y, p) in buf.enumerate_pixels() {
                for ch in 0..3 {
                    a[(y as usize, x as usize, ch)] = p.0[ch] as u32;
                }
            }
            a
        }
        other => {
            return Err(Error::DataError(format!(
                "raw image {} has unsupported pixel layout {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    RawTile::new(pixels, geo_id)
}

/// Write an 8-bit RGB raster.
pub fn save_rgb8(path: &Path, raster: &Raster) -> Result<()> {
    if raster.domain() != Domain::Uint8 || raster.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "save_rgb8 needs a 3-channel uint8 raster, got {} channels in {}",
            raster.channels(),
            raster.domain().name()
        )));
    }
    let (h, w) = (raster.height(), raster.width());
    let mut buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(w as u32, h as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        for ch in 0..3 {
            p.0[ch] = raster.pixels()[(y as usize, x as usize, ch)] as u8;
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Write raw 16-bit bands (1 or 3 channels).
pub fn save_raw16(path: &Path, pixels: &Array3<u32>) -> Result<()> {
    let (h, w, c) = pixels.dim();
    if let Some(&v) = pixels.iter().find(|&&v| v > u16::MAX as u32) {
        return Err(Error::InvalidArgument(format!("raw value {v} exceeds 16-bit range")));
    }
    match c {
        1 => {
            let mut buf = ImageBuffer::<Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
            for (x, y, p) in buf.enumerate_pixels_mut() {
                p.0[0] = pixels[(y as usize, x as usize, 0)] as u16;
            }
            buf.save(path)?;
        }
        3 => {
            let mut buf = ImageBuffer::<Rgb<u16>, Vec<u16>>::new(w as u32, h as u32);
            for (x, y, p) in buf.enumerate_pixels_mut() {
                for ch in 0..3 {
                    p.0[ch] = pixels[(y as usize, x as usize, ch)] as u16;
                }
            }
            buf.save(path)?;
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "16-bit writer supports 1 or 3 channels, got {other}"
            )))
        }
    }
    Ok(())
}

/// Write a binary mask as 0/255 grayscale.
pub fn save_mask(path: &Path, raster: &Raster) -> Result<()> {
    let plane = raster.binary_plane()?;
    let (h, w) = plane.dim();
    let mut buf = ImageBuffer::<Luma<u8>, Vec<u8>>::new(w as u32, h as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        p.0[0] = plane[(y as usize, x as usize)] * 255;
    }
    buf.save(path)?;
    Ok(())
}

/// Write a parcel label map as 16-bit grayscale (0 = background).
pub fn save_label_map(path: &Path, labels: &Array2<u32>) -> Result<()> {
    if let Some(&v) = labels.iter().find(|&&v| v > u16::MAX as u32) {
        return Err(Error::DataError(format!(
            "label {v} exceeds the 16-bit PNG range; too many parcels for this writer"
        )));
    }
    let (h, w) = labels.dim();
    let mut buf = ImageBuffer::<Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        p.0[0] = labels[(y as usize, x as usize)] as u16;
    }
    buf.save(path)?;
    Ok(())
}
