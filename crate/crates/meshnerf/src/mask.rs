//! Binary silhouette rasters: bounding boxes, bbox-normalized resampling,
//! IoU scoring, and dilation.

use crate::error::{Error, Result};

/// Inclusive pixel bounding box of the foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// Binary silhouette image. Pixels are 0 (background) or 1 (foreground),
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRaster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Set once the mask has been bbox-cropped and rescaled onto the
    /// canonical matching grid.
    pub normalized: bool,
}

impl MaskRaster {
    pub fn new(width: usize, height: usize) -> Self {
        MaskRaster {
            width,
            height,
            pixels: vec![0; width * height],
            normalized: false,
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask buffer has {} pixels, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::InvalidInput("mask pixels must be 0 or 1".into()));
        }
        Ok(MaskRaster {
            width,
            height,
            pixels,
            normalized: false,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0)
    }

    /// Tight foreground bounding box, or None for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0) = (usize::MAX, usize::MAX);
        let (mut x1, mut y1) = (0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            let row = &self.pixels[y * self.width..(y + 1) * self.width];
            for (x, &p) in row.iter().enumerate() {
                if p == 1 {
                    any = true;
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some(BBox { x0, y0, x1, y1 })
    }

    /// Crop to the foreground bbox, scale uniformly so the larger bbox side
    /// equals `canonical`, and paste centered on a `canonical` square grid.
    /// Nearest-neighbor resampling keeps the mask binary.
    pub fn normalize(&self, canonical: usize) -> Result<MaskRaster> {
        let bbox = self
            .bbox()
            .ok_or_else(|| Error::EmptySilhouette("cannot normalize an empty mask".into()))?;
        let (bw, bh) = (bbox.width(), bbox.height());
        let scale = canonical as f64 / bw.max(bh) as f64;
        let tw = ((bw as f64 * scale).round() as usize).clamp(1, canonical);
        let th = ((bh as f64 * scale).round() as usize).clamp(1, canonical);
        let mut out = MaskRaster::new(canonical, canonical);
        let off_x = (canonical - tw) / 2;
        let off_y = (canonical - th) / 2;
        for ty in 0..th {
            let sy = bbox.y0 + (((ty as f64 + 0.5) * bh as f64 / th as f64) as usize).min(bh - 1);
            for tx in 0..tw {
                let sx =
                    bbox.x0 + (((tx as f64 + 0.5) * bw as f64 / tw as f64) as usize).min(bw - 1);
                if self.get(sx, sy) == 1 {
                    out.set(off_x + tx, off_y + ty, 1);
                }
            }
        }
        out.normalized = true;
        Ok(out)
    }

    /// Chebyshev-ball dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> MaskRaster {
        if radius == 0 {
            return self.clone();
        }
        let mut out = MaskRaster::new(self.width, self.height);
        out.normalized = self.normalized;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) == 0 {
                    continue;
                }
                let y_lo = y.saturating_sub(radius);
                let y_hi = (y + radius).min(self.height - 1);
                let x_lo = x.saturating_sub(radius);
                let x_hi = (x + radius).min(self.width - 1);
                for oy in y_lo..=y_hi {
                    for ox in x_lo..=x_hi {
                        out.set(ox, oy, 1);
                    }
                }
            }
        }
        out
    }

    /// Nearest-neighbor resize to an arbitrary grid.
    pub fn resize(&self, width: usize, height: usize) -> MaskRaster {
        let mut out = MaskRaster::new(width, height);
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize)
                .min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize)
                    .min(self.width - 1);
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }
}

/// Intersection over union of two masks on the same grid.
pub fn mask_iou(a: &MaskRaster, b: &MaskRaster) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::GridMismatch(
            (a.width, a.height),
            (b.width, b.height),
        ));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&pa, &pb) in a.pixels.iter().zip(&b.pixels) {
        inter += (pa & pb) as usize;
        union += (pa | pb) as usize;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, rw: usize, rh: usize) -> MaskRaster {
        let mut m = MaskRaster::new(w, h);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                m.set(x, y, 1);
            }
        }
        m
    }

    fn disk_mask(size: usize, radius: f64) -> MaskRaster {
        let mut m = MaskRaster::new(size, size);
        let c = size as f64 / 2.0;
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 + 0.5 - c;
                let dy = y as f64 + 0.5 - c;
                if dx * dx + dy * dy <= radius * radius {
                    m.set(x, y, 1);
                }
            }
        }
        m
    }

    #[test]
    fn bbox_is_tight() {
        let m = rect_mask(32, 32, 5, 7, 10, 3);
        let b = m.bbox().unwrap();
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (5, 7, 14, 9));
    }

    #[test]
    fn normalize_preserves_aspect_and_fills_larger_dim() {
        // 10 wide x 20 tall blob, canonical 64 -> 32x64 centered
        let m = rect_mask(64, 64, 3, 9, 10, 20);
        let n = m.normalize(64).unwrap();
        assert!(n.normalized);
        let b = n.bbox().unwrap();
        assert_eq!(b.width(), 32);
        assert_eq!(b.height(), 64);
        // centered horizontally
        assert_eq!(b.x0, 16);
    }

    #[test]
    fn normalize_of_canonical_square_is_identity() {
        let m = rect_mask(64, 64, 0, 0, 64, 64);
        let n = m.normalize(64).unwrap();
        assert_eq!(n.pixels, m.pixels);
    }

    #[test]
    fn normalize_is_scale_invariant_on_disks() {
        let a = disk_mask(50, 20.0).normalize(64).unwrap();
        let b = disk_mask(200, 80.0).normalize(64).unwrap();
        let iou = mask_iou(&a, &b).unwrap();
        assert!(iou >= 0.98, "disk IoU at two scales {iou}");
    }

    #[test]
    fn normalize_empty_mask_fails() {
        let m = MaskRaster::new(8, 8);
        assert!(matches!(
            m.normalize(64),
            Err(Error::EmptySilhouette(_))
        ));
    }

    #[test]
    fn iou_identical_disjoint_half() {
        let a = rect_mask(2, 2, 0, 0, 1, 2); // left half
        let full = rect_mask(2, 2, 0, 0, 2, 2);
        let b = rect_mask(2, 2, 1, 0, 1, 2); // right half
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        assert_eq!(mask_iou(&a, &full).unwrap(), 0.5);
    }

    #[test]
    fn iou_grid_mismatch_is_an_error() {
        let a = MaskRaster::new(4, 4);
        let b = MaskRaster::new(5, 4);
        assert!(matches!(mask_iou(&a, &b), Err(Error::GridMismatch(_, _))));
    }

    #[test]
    fn iou_symmetric_bounded_and_one_iff_equal() {
        let mut rng = crate::rng::Rng::seeded(9);
        for _ in 0..50 {
            let mut a = MaskRaster::new(16, 16);
            let mut b = MaskRaster::new(16, 16);
            for p in a.pixels.iter_mut() {
                *p = (rng.unit() < 0.4) as u8;
            }
            for p in b.pixels.iter_mut() {
                *p = (rng.unit() < 0.4) as u8;
            }
            let ab = mask_iou(&a, &b).unwrap();
            let ba = mask_iou(&b, &a).unwrap();
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab));
            if ab == 1.0 {
                assert_eq!(a.pixels, b.pixels);
            }
        }
    }
}
