//! 8-bit RGB images: decoding, resizing to network-friendly dims, PNG output.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;

use crate::error::{Error, Result};

/// Spatial dims of network inputs must be multiples of this (four 2×2 pools precede `conv5_1`).
pub const SIZE_MULTIPLE: u32 = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    /// Interleaved RGB, row-major.
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        Self::from_interleaved(width, height, 3, pixels)
    }

    pub fn from_interleaved(width: u32, height: u32, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 3 {
            return Err(Error::config(format!(
                "expected a 3-channel RGB image, got {channels} channel(s)"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::config(format!("image dims {width}x{height} must be non-zero")));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::config(format!(
                "{width}x{height} RGB image needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn height(&self) -> usize {
        self.height as usize
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let decoded = image::load_from_memory(&bytes).map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?;
        let rgb = decoded.to_rgb8();
        Self::new(rgb.width(), rgb.height(), rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.as_rgb()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::io(path, std::io::Error::other(other)),
            })
    }

    /// Bilinear (triangle filter) resize.
    pub fn resize(&self, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config(format!("resize target {width}x{height} must be non-zero")));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let out = imageops::resize(&self.as_rgb(), width, height, FilterType::Triangle);
        Self::new(width, height, out.into_raw())
    }

    /// Mean absolute per-channel difference, in 8-bit levels.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::config(format!(
                "cannot compare {}x{} with {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let total: u64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| a.abs_diff(b) as u64)
            .sum();
        Ok(total as f64 / self.pixels.len() as f64)
    }

    fn as_rgb(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("pixel buffer length checked at construction")
    }
}

/// Round requested dims down to multiples of [`SIZE_MULTIPLE`].
pub fn snap_dims(width: u32, height: u32) -> Result<(u32, u32)> {
    let snap = |v: u32| v / SIZE_MULTIPLE * SIZE_MULTIPLE;
    let (w, h) = (snap(width), snap(height));
    if w == 0 || h == 0 {
        return Err(Error::config(format!(
            "requested size {width}x{height} is smaller than {SIZE_MULTIPLE}x{SIZE_MULTIPLE}"
        )));
    }
    Ok((w, h))
}

/// Decode `path` and resize it to the requested size snapped down to multiples of 16.
pub fn load_and_resize(path: &Path, target_width: u32, target_height: u32) -> Result<Image> {
    let (w, h) = snap_dims(target_width, target_height)?;
    if (w, h) != (target_width, target_height) {
        log::warn!(
            "requested {target_width}x{target_height} adjusted to {w}x{h} (multiples of {SIZE_MULTIPLE})"
        );
    }
    Image::load(path)?.resize(w, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapping() {
        assert_eq!(snap_dims(412, 522).unwrap(), (400, 512));
        assert_eq!(snap_dims(64, 80).unwrap(), (64, 80));
        assert!(matches!(snap_dims(15, 64), Err(Error::Config(_))));
        assert!(snap_dims(0, 0).is_err());
    }

    #[test]
    fn non_rgb_rejected() {
        let err = Image::from_interleaved(2, 2, 4, vec![0; 16]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(Image::new(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_and_resize(Path::new("/no/such/dir/pic.png"), 64, 64).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/no/such/dir/pic.png"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn png_round_trip_and_resize() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..20 * 18 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = Image::new(20, 18, pixels).unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);
        let r = load_and_resize(&path, 35, 17).unwrap();
        assert_eq!((r.width(), r.height()), (32, 16));
    }

    #[test]
    fn corrupt_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not an image").unwrap();
        let err = Image::load(&path).unwrap_err();
        assert!(matches!(err, Error::Image { .. }));
        assert!(err.to_string().contains("bad.png"));
    }
}
