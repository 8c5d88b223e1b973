//! 8-bit PNG I/O for RGB images and single-channel masks, with the [0,1]
//! float image buffer used throughout training and evaluation.

use crate::error::{Error, Result};
use crate::mask::MaskRaster;
use std::path::Path;

/// RGB image with channels interleaved row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> ImageRgb {
        ImageRgb {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// Quantize to 8 bits per channel.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> ImageRgb {
        ImageRgb {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Foreground matte by luminance threshold, for inputs that arrive
    /// without a mask (assumes a dark background).
    pub fn luminance_matte(&self, threshold: f64) -> MaskRaster {
        let mut mask = MaskRaster::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let [r, g, b] = self.pixel(x, y);
                let luma = 0.299 * r + 0.587 * g + 0.114 * b;
                if luma > threshold {
                    mask.set(x, y, 1);
                }
            }
        }
        mask
    }
}

pub fn save_rgb_png(path: &Path, image: &ImageRgb) -> Result<()> {
    let buf = image.to_bytes();
    image::save_buffer(
        path,
        &buf,
        image.width as u32,
        image.height as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_rgb_png(path: &Path) -> Result<ImageRgb> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(ImageRgb::from_bytes(w, h, img.as_raw()))
}

/// Masks are stored as 8-bit single-channel PNGs, 0 = background,
/// 255 = foreground.
pub fn save_mask_png(path: &Path, mask: &MaskRaster) -> Result<()> {
    let buf: Vec<u8> = mask.pixels.iter().map(|&p| if p == 1 { 255 } else { 0 }).collect();
    image::save_buffer(
        path,
        &buf,
        mask.width as u32,
        mask.height as u32,
        image::ColorType::L8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_mask_png(path: &Path) -> Result<MaskRaster> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<u8> = img.as_raw().iter().map(|&b| u8::from(b >= 128)).collect();
    MaskRaster::from_pixels(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_roundtrip_is_exact_at_8_bits() {
        let mut img = ImageRgb::new(9, 7);
        for y in 0..7 {
            for x in 0..9 {
                img.set_pixel(x, y, [x as f64 / 8.0, y as f64 / 6.0, 0.25]);
            }
        }
        let dir = std::env::temp_dir().join("meshnerf_img_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.png");
        save_rgb_png(&path, &img).unwrap();
        let loaded = load_rgb_png(&path).unwrap();
        assert_eq!(loaded.to_bytes(), img.to_bytes());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mask_png_roundtrip_is_bit_exact() {
        let mut mask = MaskRaster::new(12, 5);
        for x in 3..9 {
            mask.set(x, 2, 1);
        }
        let dir = std::env::temp_dir().join("meshnerf_img_tests_mask");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.png");
        save_mask_png(&path, &mask).unwrap();
        let loaded = load_mask_png(&path).unwrap();
        assert_eq!(loaded.pixels, mask.pixels);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn luminance_matte_separates_bright_object() {
        let mut img = ImageRgb::new(4, 1);
        img.set_pixel(0, 0, [0.0, 0.0, 0.0]);
        img.set_pixel(1, 0, [0.9, 0.1, 0.1]);
        img.set_pixel(2, 0, [0.02, 0.02, 0.02]);
        img.set_pixel(3, 0, [0.5, 0.9, 0.2]);
        let mask = img.luminance_matte(0.05);
        assert_eq!(mask.pixels, vec![0, 1, 0, 1]);
    }
}
